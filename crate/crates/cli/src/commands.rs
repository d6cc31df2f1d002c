use std::path::Path;

use aaut_core::aaut::{coset_ball, Aaut};
use aaut_core::error::Error;
use aaut_core::io::{trace_to_jsonl, word_to_json};
use aaut_core::localgroup::{random_local, LocalAut, Portrait};
use aaut_core::perm::Perm;
use aaut_core::presentation::{Letter, Presentation};
use aaut_core::selfsim::{Budget, WreathSpec};
use aaut_core::thompson::{bfs_ball, default_generation_check, GeneratingSet, OracleConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::manifest::Artifacts;

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Group laws, decomposition and action cross-checks on random decorated elements.
    ComposeCheck(ComposeCheck),
    /// Exact word lengths on the Cayley ball of Σ.
    BfsBall(BfsBall),
    /// Rewrite random compact elements below one root into Σ-words.
    RewriteLocal(RewriteLocal),
    /// Move compact letters of random words to the front.
    Normalize(Normalize),
    /// Fill generated null-homotopic words of one length and keep the traces.
    Fill(Fill),
    /// Area statistics over several lengths.
    DehnProfile(DehnProfile),
    /// BFS on cosets of the compact open subgroup.
    CosetBall(CosetBall),
    /// Nucleus of a self-similar group.
    Nucleus(SpecArgs),
    /// Branch-type index identities at one level.
    BranchCheck(BranchCheck),
    /// Closure membership of truncated elements and of corrupted copies.
    PatternTest(PatternTest),
    /// Sizes of the level images.
    LevelImage(LevelImage),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ComposeCheck(_) => "compose-check",
            Command::BfsBall(_) => "bfs-ball",
            Command::RewriteLocal(_) => "rewrite-local",
            Command::Normalize(_) => "normalize",
            Command::Fill(_) => "fill",
            Command::DehnProfile(_) => "dehn-profile",
            Command::CosetBall(_) => "coset-ball",
            Command::Nucleus(_) => "nucleus",
            Command::BranchCheck(_) => "branch-check",
            Command::PatternTest(_) => "pattern-test",
            Command::LevelImage(_) => "level-image",
        }
    }

    pub fn run(&self, cfg: &Config, out: &mut Artifacts) -> Result<String> {
        match self {
            Command::ComposeCheck(a) => compose_check(cfg, a, out),
            Command::BfsBall(a) => bfs(cfg, a, out),
            Command::RewriteLocal(a) => rewrite_local(cfg, a, out),
            Command::Normalize(a) => normalize(cfg, a, out),
            Command::Fill(a) => fill(cfg, a, out),
            Command::DehnProfile(a) => dehn_profile(cfg, a, out),
            Command::CosetBall(a) => cosets(cfg, a, out),
            Command::Nucleus(a) => nucleus(cfg, a, out),
            Command::BranchCheck(a) => branch_check(cfg, a, out),
            Command::PatternTest(a) => pattern_test(cfg, a, out),
            Command::LevelImage(a) => level_image(cfg, a, out),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ComposeCheck {
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Caret count of the random tree pairs.
    #[arg(long, default_value_t = 4)]
    pub carets: usize,
    /// Labels in the random compact factors.
    #[arg(long, default_value_t = 4)]
    pub labels: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct BfsBall {
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    #[arg(long, default_value_t = 2048)]
    pub memory_mb: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RewriteLocal {
    /// Root index, counted from 1.
    #[arg(long, default_value_t = 1)]
    pub component: usize,
    #[arg(long, default_value_t = 6)]
    pub kappa: usize,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct Normalize {
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct Fill {
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct DehnProfile {
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct CosetBall {
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SpecArgs {
    /// Built-in name or path to a spec file.
    #[arg(long, default_value = "grigorchuk")]
    pub spec: String,
}

#[derive(Args, Debug, Serialize)]
pub struct BranchCheck {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 3)]
    pub s: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct PatternTest {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Pattern level.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Truncation depth of the tested elements.
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub word_len: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct LevelImage {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
}

fn sigma(cfg: &Config) -> Result<GeneratingSet> {
    let check = default_generation_check(cfg.params, cfg.q);
    GeneratingSet::build(cfg.params, cfg.q, check).context("building the generating set")
}

fn oracle_config(cfg: &Config) -> OracleConfig {
    let mut oc = OracleConfig::default();
    if let Some(b) = cfg.budget {
        oc.max_steps = b;
    }
    oc
}

fn selfsim_budget(cfg: &Config) -> Budget {
    let mut b = Budget::default();
    if let Some(n) = cfg.budget {
        b.max_elements = n;
    }
    b
}

fn load_spec(text: &str) -> Result<WreathSpec> {
    let path = Path::new(text);
    if path.is_file() {
        let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(WreathSpec::parse(&body)?)
    } else {
        Ok(WreathSpec::builtin(text)?)
    }
}

fn compose_check(cfg: &Config, a: &ComposeCheck, out: &mut Artifacts) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        index: usize,
        carets: [usize; 3],
        associative: bool,
        inverse: bool,
        decomposition: bool,
        action_vertices: usize,
        action: bool,
    }
    let aaut = Aaut::new(cfg.params, cfg.group.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(a.samples);
    for index in 0..a.samples {
        let [g, h, f] =
            [(); 3].map(|_| aaut.random_element(rng.gen_range(0..=a.carets), rng.gen_range(0..=a.labels), &mut rng));
        let gh = aaut.mul(&g, &h);
        let associative = aaut.mul(&gh, &f) == aaut.mul(&g, &aaut.mul(&h, &f));
        let inverse = aaut.mul(&g, &aaut.inverse(&g)).is_identity();
        let decomposition = aaut.reconstruct(&aaut.decompose(&g)).ok().as_ref() == Some(&g);
        // Pointwise composition on a level below both supports.
        let level = g.diagram().stable_level() + h.diagram().stable_level() + 1;
        let mut checked = 0;
        let mut action = true;
        for v in cfg.params.level_vertices(level) {
            if let Some(w) = h.apply(&v).and_then(|hv| g.apply(&hv)) {
                checked += 1;
                action &= gh.apply(&v) == Some(w);
            }
        }
        rows.push(Row {
            index,
            carets: [g.diagram().carets(), h.diagram().carets(), f.diagram().carets()],
            associative,
            inverse,
            decomposition,
            action_vertices: checked,
            action: action && checked > 0,
        });
    }
    out.write_csv(
        "compose_check.csv",
        &[
            "index",
            "carets_g",
            "carets_h",
            "carets_f",
            "associative",
            "inverse",
            "decomposition",
            "action_vertices",
            "action",
        ],
        &rows,
    )?;
    let failures = rows.iter().filter(|r| !(r.associative && r.inverse && r.decomposition && r.action)).count();
    if failures > 0 {
        bail!(Error::Precondition(format!("{failures} of {} samples failed a group law", rows.len())));
    }
    Ok(format!("{} samples, all laws hold", rows.len()))
}

fn bfs(cfg: &Config, a: &BfsBall, out: &mut Artifacts) -> Result<String> {
    let sigma = sigma(cfg)?;
    let report = bfs_ball(&sigma, a.radius, a.memory_mb << 20, true)?;
    let rows: Vec<(usize, usize, usize)> =
        report.elements.iter().enumerate().map(|(id, (v, len))| (id, *len, v.carets())).collect();
    out.write_csv("ball.csv", &["element_id", "length", "carets"], &rows)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        sigma_size: usize,
        requested_radius: usize,
        completed_radius: usize,
        sphere_sizes: &'a [usize],
        c_sigma: usize,
        violations: usize,
        max_ratio: f64,
    }
    out.write_json(
        "ball.json",
        &Summary {
            sigma_size: sigma.len(),
            requested_radius: report.requested_radius,
            completed_radius: report.completed_radius,
            sphere_sizes: &report.sphere_sizes,
            c_sigma: report.c_sigma,
            violations: report.violations,
            max_ratio: report.max_ratio,
        },
    )?;
    if report.budget_exceeded {
        bail!(Error::Budget(format!(
            "radius {} needs more than {} MB; completed radius {}",
            a.radius, a.memory_mb, report.completed_radius
        )));
    }
    if report.violations > 0 {
        bail!(Error::Precondition(format!("{} elements exceed C_Σ·|v|", report.violations)));
    }
    Ok(format!("spheres {:?}, max ratio {:.3}", report.sphere_sizes, report.max_ratio))
}

fn rewrite_local(cfg: &Config, a: &RewriteLocal, out: &mut Artifacts) -> Result<String> {
    if a.component == 0 || a.component > cfg.params.k {
        bail!(Error::InvalidParams(format!("component must be in 1..={}", cfg.params.k)));
    }
    let i = a.component - 1;
    let sigma = sigma(cfg)?;
    let pres = Presentation::new(Aaut::new(cfg.params, cfg.group.clone())?, &sigma, oracle_config(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for index in 0..a.samples {
        let local = random_local(cfg.params.d, &cfg.group, a.kappa, &mut rng);
        let u = Portrait::component_portrait(cfg.params, i, local);
        let (word, trace, rep) = pres.rewrite_local(i, &u)?;
        let source = Presentation::compact_word(&u);
        let target: Vec<Letter> = word.iter().map(|&s| Letter::Sigma(s)).collect();
        pres.verify_trace(&source, &trace, &target)
            .map_err(|k| Error::Precondition(format!("sample {index}: step {k} failed replay")))?;
        out.write(&format!("traces/rewrite-local-{index}.jsonl"), trace_to_jsonl(&trace).as_bytes())?;
        rows.push((index, rep.kappa, rep.word_len, rep.cost, rep.bound, rep.nodes_checked));
    }
    out.write_csv("rewrite_local.csv", &["index", "kappa", "word_len", "cost", "bound", "nodes_checked"], &rows)?;
    let worst = rows.iter().map(|r| r.3 as f64 / r.1.max(1) as f64).fold(0.0, f64::max);
    Ok(format!("{} samples, worst cost/κ {worst:.2}", rows.len()))
}

fn normalize(cfg: &Config, a: &Normalize, out: &mut Artifacts) -> Result<String> {
    let sigma = sigma(cfg)?;
    let pres = Presentation::new(Aaut::new(cfg.params, cfg.group.clone())?, &sigma, oracle_config(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for index in 0..a.samples {
        let w = pres.random_word(a.n, &mut rng);
        let norm = pres.normalize_left(&w)?;
        let mut target = Presentation::compact_word(&norm.u);
        target.extend(norm.s.iter().map(|&s| Letter::Sigma(s)));
        pres.verify_trace(&w, &norm.trace, &target)
            .map_err(|k| Error::Precondition(format!("sample {index}: step {k} failed replay")))?;
        out.write(&format!("traces/normalize-{index}.jsonl"), trace_to_jsonl(&norm.trace).as_bytes())?;
        rows.push((index, w.len(), norm.trace.len(), norm.bound, norm.u.kappa(), norm.s.len()));
    }
    out.write_csv("normalize.csv", &["index", "n", "steps", "bound", "kappa_u", "sigma_len"], &rows)?;
    Ok(format!("{} samples of length {}", rows.len(), a.n))
}

const PROFILE_HEADER: [&str; 7] = ["n", "samples", "mean_area", "max_area", "nlogn_part", "delta_part", "c_hat"];
const SAMPLE_HEADER: [&str; 8] = ["n", "index", "kind", "length", "area", "nlogn_part", "delta_part", "free_steps"];

fn fill(cfg: &Config, a: &Fill, out: &mut Artifacts) -> Result<String> {
    use rayon::prelude::*;
    let sigma = sigma(cfg)?;
    let pres = Presentation::new(Aaut::new(cfg.params, cfg.group.clone())?, &sigma, oracle_config(cfg))?;
    let results = (0..a.samples)
        .into_par_iter()
        .map(|i| pres.fill_sample(a.n, i, cfg.seed, cfg.charge_free))
        .collect::<Result<Vec<_>, _>>()?;
    let mut loops = String::new();
    let mut samples = Vec::new();
    for (w, f, s) in results {
        out.write(&format!("traces/fill-n{}-{}.jsonl", a.n, s.index), trace_to_jsonl(&f.trace).as_bytes())?;
        loops.push_str(&serde_json::to_string(&word_to_json(&w))?);
        loops.push('\n');
        samples.push(s);
    }
    out.write("loops.jsonl", loops.as_bytes())?;
    let rows = aaut_core::presentation::profile_rows(&[a.n], &samples);
    out.write_csv("profile.csv", &PROFILE_HEADER, &rows)?;
    out.write_csv("samples.csv", &SAMPLE_HEADER, &samples)?;
    let c_hat = rows.first().map_or(0.0, |r| r.c_hat);
    Ok(format!("{} loops of length {} filled, ĉ {c_hat:.3}", samples.len(), a.n))
}

fn dehn_profile(cfg: &Config, a: &DehnProfile, out: &mut Artifacts) -> Result<String> {
    let sigma = sigma(cfg)?;
    let pres = Presentation::new(Aaut::new(cfg.params, cfg.group.clone())?, &sigma, oracle_config(cfg))?;
    let (rows, samples) = pres.dehn_profile(&a.lengths, a.samples, cfg.seed, cfg.charge_free)?;
    out.write_csv("profile.csv", &PROFILE_HEADER, &rows)?;
    out.write_csv("samples.csv", &SAMPLE_HEADER, &samples)?;
    let c: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.c_hat)).collect();
    Ok(format!("{} samples, ĉ per length [{}]", samples.len(), c.join(", ")))
}

fn cosets(cfg: &Config, a: &CosetBall, out: &mut Artifacts) -> Result<String> {
    let sigma = sigma(cfg)?;
    let aaut = Aaut::new(cfg.params, cfg.group.clone())?;
    let report = coset_ball(&aaut, &sigma, a.radius, cfg.budget.unwrap_or(2_000_000))?;
    let spheres: Vec<(usize, usize)> = report.sphere_sizes.iter().copied().enumerate().collect();
    out.write_csv("spheres.csv", &["radius", "cosets"], &spheres)?;
    out.write_csv("edges.csv", &["from", "to", "generator"], &report.edges)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        requested_radius: usize,
        completed_radius: usize,
        sphere_sizes: &'a [usize],
        confirmed_matches: usize,
        violations: usize,
        stabilizer_checks: usize,
    }
    out.write_json(
        "coset_ball.json",
        &Summary {
            requested_radius: report.requested_radius,
            completed_radius: report.completed_radius,
            sphere_sizes: &report.sphere_sizes,
            confirmed_matches: report.confirmed_matches,
            violations: report.violations,
            stabilizer_checks: report.stabilizer_checks,
        },
    )?;
    if report.budget_exceeded {
        bail!(Error::Budget(format!("coset limit reached at radius {}", report.completed_radius)));
    }
    if report.violations > 0 {
        bail!(Error::Precondition(format!("{} coset key violations", report.violations)));
    }
    Ok(format!("spheres {:?}, {} matches confirmed", report.sphere_sizes, report.confirmed_matches))
}

fn nucleus(cfg: &Config, a: &SpecArgs, out: &mut Artifacts) -> Result<String> {
    let spec = load_spec(&a.spec)?;
    let budget = selfsim_budget(cfg);
    let n = spec.nucleus(&budget)?;
    let verified = spec.verify_nucleus(&n.elements, &budget)?;
    let elements: Vec<String> = n.elements.iter().map(|w| spec.format_word(w)).collect();
    out.write_json(
        "nucleus.json",
        &serde_json::json!({ "spec": a.spec, "elements": elements, "rounds": n.rounds, "verified": verified }),
    )?;
    Ok(format!("nucleus of size {}: {{{}}}", elements.len(), elements.join(", ")))
}

fn branch_check(cfg: &Config, a: &BranchCheck, out: &mut Artifacts) -> Result<String> {
    let spec = load_spec(&a.spec.spec)?;
    let budget = selfsim_budget(cfg);
    let index = spec.index_identity_check(a.s, &budget)?;
    let stab = spec.stab_image_identity(a.s, &budget)?;
    out.write_json(
        "branch_check.json",
        &serde_json::json!({ "spec": a.spec.spec, "index": index, "stabilizer": stab }),
    )?;
    Ok(format!(
        "index identity {} ({} / {} / {}), stabilizer identity {} ({} vs {})",
        if index.holds { "holds" } else { "fails" },
        index.formula,
        index.pattern_side,
        index.branch_side,
        if stab.holds { "holds" } else { "fails" },
        stab.lhs,
        stab.rhs
    ))
}

fn pattern_test(cfg: &Config, a: &PatternTest, out: &mut Artifacts) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        index: usize,
        word: String,
        member: bool,
        fault_at: String,
        fault_detected: bool,
    }
    if a.depth < a.m {
        bail!(Error::InvalidParams(format!("depth {} is below the pattern level {}", a.depth, a.m)));
    }
    let spec = load_spec(&a.spec.spec)?;
    let d = spec.degree();
    let patterns = spec.pattern_set(a.m, &selfsim_budget(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(a.samples);
    for index in 0..a.samples {
        let g = spec.random_word(a.word_len, &mut rng);
        let t = spec.truncation(&g, a.depth);
        let member = patterns.in_closure(&t, a.depth)?;
        // Compose the label at a random vertex above the depth with a transposition.
        let path: Vec<u8> = (0..rng.gen_range(0..a.depth)).map(|_| rng.gen_range(0..d) as u8).collect();
        let mut images: Vec<usize> = (0..d).collect();
        images.swap(0, rng.gen_range(1..d));
        let swap = Perm::from_images(&images)?;
        let mut labels: Vec<_> = t.labels().map(|(k, v)| (k.clone(), *v)).collect();
        match labels.iter_mut().find(|(k, _)| k[..] == path[..]) {
            Some((_, v)) => *v = v.compose(&swap),
            None => labels.push((path.iter().copied().collect(), swap)),
        }
        let faulty = LocalAut::from_labels(labels);
        let fault_detected = !patterns.in_closure(&faulty, a.depth)?;
        rows.push(Row {
            index,
            word: spec.format_word(&g),
            member,
            fault_at: path.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join("."),
            fault_detected,
        });
    }
    out.write_csv("pattern_test.csv", &["index", "word", "member", "fault_at", "fault_detected"], &rows)?;
    let missing = rows.iter().filter(|r| !r.member).count();
    let detected = rows.iter().filter(|r| r.fault_detected).count();
    if missing > 0 {
        bail!(Error::Precondition(format!("{missing} group elements rejected by the level-{} patterns", a.m)));
    }
    Ok(format!("{} elements accepted, {detected} of {} corrupted copies rejected", rows.len(), rows.len()))
}

fn level_image(cfg: &Config, a: &LevelImage, out: &mut Artifacts) -> Result<String> {
    let spec = load_spec(&a.spec.spec)?;
    let budget = selfsim_budget(cfg);
    let rows: Vec<(usize, usize)> =
        (0..=a.levels).map(|n| Ok((n, spec.level_image_size(n, &budget)?))).collect::<Result<_>>()?;
    out.write_csv("level_image.csv", &["level", "size"], &rows)?;
    let sizes: Vec<String> = rows.iter().map(|r| r.1.to_string()).collect();
    Ok(format!("level images [{}]", sizes.join(", ")))
}
