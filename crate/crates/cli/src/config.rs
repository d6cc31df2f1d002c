//! Run configuration: built-in defaults, then a `key=value` file, then command-line flags.

use std::path::{Path, PathBuf};

use aaut_core::perm::PermGroup;
use aaut_core::thompson::default_caret_bound;
use aaut_core::tree::TreeParams;
use anyhow::{bail, Context, Result};
use clap::Args;

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// `key=value` configuration file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Local group: `sym<d>`, `alt<d>`, `trivial<d>` or one-line generators `2,1,3;1,3,2`.
    #[arg(long = "D", global = true)]
    pub group: Option<String>,
    /// Caret bound of the generating set.
    #[arg(long, alias = "sigma-carets", global = true)]
    pub q: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Element budget for searches and closures.
    #[arg(long, env = "AAUT_BUDGET", global = true)]
    pub budget: Option<usize>,
    /// Charge free reductions one unit of area each.
    #[arg(long, global = true)]
    pub charge_free_reductions: bool,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub params: TreeParams,
    pub group_text: String,
    pub group: PermGroup,
    pub q: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub budget: Option<usize>,
    pub charge_free: bool,
}

#[derive(Default)]
struct Raw {
    d: Option<usize>,
    k: Option<usize>,
    group: Option<String>,
    q: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    budget: Option<usize>,
    charge_free: Option<bool>,
}

fn parse_file(path: &Path) -> Result<Raw> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut raw = Raw::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').with_context(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || format!("{}:{}: bad value for {key}", path.display(), n + 1);
        match key {
            "d" => raw.d = Some(value.parse().with_context(bad)?),
            "k" => raw.k = Some(value.parse().with_context(bad)?),
            "D" => raw.group = Some(value.to_string()),
            "q" => raw.q = Some(value.parse().with_context(bad)?),
            "seed" => raw.seed = Some(value.parse().with_context(bad)?),
            "out" => raw.out = Some(PathBuf::from(value)),
            "budget" => raw.budget = Some(value.parse().with_context(bad)?),
            "charge_free_reductions" => raw.charge_free = Some(value.parse().with_context(bad)?),
            _ => bail!("{}:{}: unknown key {key:?}", path.display(), n + 1),
        }
    }
    Ok(raw)
}

impl Config {
    pub fn load(args: &CommonArgs) -> Result<Config> {
        let file = match &args.config {
            Some(p) => parse_file(p)?,
            None => Raw::default(),
        };
        let d = args.d.or(file.d).unwrap_or(2);
        let k = args.k.or(file.k).unwrap_or(2);
        let params = TreeParams::new(d, k)?;
        let group_text = args.group.clone().or(file.group).unwrap_or_else(|| format!("sym{d}"));
        let group = PermGroup::parse(&group_text, d)?;
        let q = args.q.or(file.q).unwrap_or_else(|| default_caret_bound(params));
        if q == 0 {
            bail!("q must be at least 1");
        }
        Ok(Config {
            params,
            group_text,
            group,
            q,
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            budget: args.budget.or(file.budget),
            charge_free: args.charge_free_reductions || file.charge_free.unwrap_or(false),
        })
    }

    /// Canonical `key=value` text; the output directory is excluded so that moving a run
    /// does not change its hash.
    pub fn canonical(&self) -> String {
        format!(
            "d={}\nk={}\nD={}\nq={}\nseed={}\nbudget={}\ncharge_free_reductions={}\n",
            self.params.d,
            self.params.k,
            self.group_text,
            self.q,
            self.seed,
            self.budget.map_or("default".to_string(), |b| b.to_string()),
            self.charge_free
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("aaut-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# run\nd = 3\nk=2\nD=sym3\nseed=5\n").unwrap();
        let args = CommonArgs { config: Some(path.clone()), seed: Some(9), ..Default::default() };
        let c = Config::load(&args).unwrap();
        assert_eq!((c.params.d, c.seed, c.q), (3, 9, 2));
        std::fs::write(&path, "colour=blue\n").unwrap();
        assert!(Config::load(&args).is_err());
        std::fs::write(&path, "d=2\nD=sym3\n").unwrap();
        assert!(Config::load(&args).is_err());
    }
}
