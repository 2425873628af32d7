//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cocycle::{lyapunov_csv, lyapunov_curve, lyapunov_mc, OneStepMap};
use crate::discrete::{
    almost_sure_spectrum_discrete, bands_csv, build_finite_tree, decomposition_equivalence,
    discrete_localization_suite, merge_intervals, periodic_spectrum_continuum,
};
use crate::error::Error;
use crate::furstenberg::{exceptional_set_continuum, exceptional_set_discrete, DiscreteRegime};
use crate::halfline::{decay_rate_fit, default_grid_step, dynamical_moment, eigenfunction_profile, truncated_eigenvalues, Psi};
use crate::model::{derive_seed, periodic_word, sample_word, EnvironmentWord, SingleGenDistribution, SiteParams, TreeGeometry};
use crate::treeops::tree_dynamical_moment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    /// Random branching, ell = 1, q = 0
    Rbm,
    /// Random lengths, b = d, q = 0
    Rlm,
    /// Random couplings, b = d, ell = 1
    Rkm,
    /// Discrete adjacency, random branching, p = 1
    DiscreteRbm,
    /// Discrete adjacency, random weights p, b = d
    DiscreteRwm,
    /// Discrete Schroedinger, random q, b = d, p = 1
    DiscreteRso,
    /// Distribution from --distribution
    Custom,
}

impl ModelPreset {
    fn is_discrete(self) -> bool {
        matches!(self, Self::DiscreteRbm | Self::DiscreteRwm | Self::DiscreteRso)
    }

    fn map(self) -> OneStepMap {
        if self.is_discrete() {
            OneStepMap::DiscreteJacobi
        } else {
            OneStepMap::ContinuumKirchhoff
        }
    }
}

/// Flags shared by every subcommand. Values from `--config` take precedence.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub model: Option<ModelPreset>,
    /// Preset atoms, e.g. `2,3` (branchings), `1,3` (lengths) or `0,0.5` (couplings)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub atoms: Option<Vec<f64>>,
    /// Fixed branching for presets with random lengths, weights or couplings
    #[arg(long)]
    pub branching: Option<u32>,
    /// Distribution JSON file for `--model custom`
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    /// Energy window `lo:hi`
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    pub window: Option<(f64, f64)>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest period for band-spectrum unions
    #[arg(long)]
    pub period: Option<usize>,
    /// Support radius of the initial state for `moment`
    #[arg(long)]
    pub radius: Option<f64>,
    /// Explicit word JSON file instead of a sampled one
    #[arg(long)]
    pub word: Option<PathBuf>,
    /// Use the free word b = 1, ell = 1, q = 0
    #[arg(long)]
    pub free: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err("window needs lo < hi".into());
    }
    Ok((lo, hi))
}

#[derive(Debug, Parser)]
#[command(name = "radloc", version, about = "Anderson localization on radial trees via transfer-matrix cocycles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Lyapunov exponent curve as CSV
    Lyapunov(CommandArgs),
    /// Exceptional energies with certificates as JSON
    Exceptional(CommandArgs),
    /// Band-spectrum union of periodic approximants as CSV
    Spectrum(CommandArgs),
    /// Dirichlet-Neumann truncated eigenvalues as CSV
    Truncspec(CommandArgs),
    /// Eigenfunction decay fits against Lyapunov exponents
    Decay(CommandArgs),
    /// Half-line and tree dynamical moment bounds as JSON
    Moment(CommandArgs),
    /// Discrete decomposition equivalence oracle as JSON
    Equiv(CommandArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommandArgs {
    /// JSON config; its values override flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Lyapunov(_) => "lyapunov",
            Command::Exceptional(_) => "exceptional",
            Command::Spectrum(_) => "spectrum",
            Command::Truncspec(_) => "truncspec",
            Command::Decay(_) => "decay",
            Command::Moment(_) => "moment",
            Command::Equiv(_) => "equiv",
        }
    }

    fn args(&self) -> &CommandArgs {
        match self {
            Command::Lyapunov(a)
            | Command::Exceptional(a)
            | Command::Spectrum(a)
            | Command::Truncspec(a)
            | Command::Decay(a)
            | Command::Moment(a)
            | Command::Equiv(a) => a,
        }
    }
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DISTRIBUTION: i32 = 3;
}

#[derive(Debug)]
struct CliError {
    code: i32,
    kind: &'static str,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidDistribution(_) => (exit::DISTRIBUTION, "invalidDistribution"),
            Error::Json(_) => (exit::CONFIG, "config"),
            Error::InvalidInput(_) => (exit::FAILURE, "invalidInput"),
            Error::OutOfRange { .. } => (exit::FAILURE, "outOfRange"),
            Error::Precondition(_) => (exit::FAILURE, "precondition"),
            Error::Numerical(_) => (exit::FAILURE, "numerical"),
        };
        CliError { code, kind, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError { code: exit::CONFIG, kind: "config", message: message.into() }
}

/// Flags merged with the config file, defaults filled in.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Resolved {
    pub command: String,
    pub model: ModelPreset,
    pub distribution: Value,
    pub window: (f64, f64),
    pub grid: usize,
    pub n: usize,
    pub trials: usize,
    pub depth: usize,
    pub p: f64,
    pub seed: u64,
    pub period: usize,
    pub radius: Option<f64>,
    pub word: Option<Value>,
    pub free: bool,
    #[serde(skip)]
    dist: Option<SingleGenDistribution>,
    #[serde(skip)]
    explicit_word: Option<EnvironmentWord>,
    #[serde(skip)]
    output: Option<PathBuf>,
}

fn merge(flags: &RunConfig, file: Option<RunConfig>) -> RunConfig {
    let Some(f) = file else { return flags.clone() };
    RunConfig {
        model: f.model.or(flags.model),
        atoms: f.atoms.or_else(|| flags.atoms.clone()),
        branching: f.branching.or(flags.branching),
        distribution: f.distribution.or_else(|| flags.distribution.clone()),
        window: f.window.or(flags.window),
        grid: f.grid.or(flags.grid),
        n: f.n.or(flags.n),
        trials: f.trials.or(flags.trials),
        depth: f.depth.or(flags.depth),
        p: f.p.or(flags.p),
        seed: f.seed.or(flags.seed),
        period: f.period.or(flags.period),
        radius: f.radius.or(flags.radius),
        word: f.word.or_else(|| flags.word.clone()),
        free: f.free || flags.free,
        output: f.output.or_else(|| flags.output.clone()),
    }
}

fn preset_distribution(model: ModelPreset, atoms: &[f64], d: u32) -> std::result::Result<SingleGenDistribution, CliError> {
    let as_branching = |x: f64| -> std::result::Result<u32, CliError> {
        if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
            Ok(x as u32)
        } else {
            Err(config_error(format!("branching atoms must be positive integers, got {x}")))
        }
    };
    let sites: Vec<SiteParams> = match model {
        ModelPreset::Rbm | ModelPreset::DiscreteRbm => {
            atoms.iter().map(|&x| Ok(SiteParams::new(as_branching(x)?, 1.0, 0.0))).collect::<std::result::Result<_, CliError>>()?
        }
        ModelPreset::Rlm | ModelPreset::DiscreteRwm => atoms.iter().map(|&x| SiteParams::new(d, x, 0.0)).collect(),
        ModelPreset::Rkm | ModelPreset::DiscreteRso => atoms.iter().map(|&x| SiteParams::new(d, 1.0, x)).collect(),
        ModelPreset::Custom => unreachable!("custom distributions come from a file"),
    };
    Ok(SingleGenDistribution::uniform(&sites)?)
}

fn default_atoms(model: ModelPreset) -> Vec<f64> {
    match model {
        ModelPreset::Rbm | ModelPreset::DiscreteRbm => vec![2.0, 3.0],
        ModelPreset::Rlm => vec![1.0, 3.0],
        ModelPreset::DiscreteRwm => vec![0.5, 1.0],
        ModelPreset::Rkm | ModelPreset::DiscreteRso => vec![0.0, 1.0],
        ModelPreset::Custom => Vec::new(),
    }
}

fn read_file(path: &Path) -> std::result::Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

fn resolve(cmd: &Command) -> std::result::Result<Resolved, CliError> {
    let args = cmd.args();
    let file = match &args.config {
        Some(path) => Some(
            serde_json::from_str::<RunConfig>(&read_file(path)?)
                .map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let c = merge(&args.run, file);
    let model = c.model.unwrap_or(ModelPreset::Rbm);
    let explicit_word = match (&c.word, c.free) {
        (Some(path), _) => Some(EnvironmentWord::from_json(&read_file(path)?).map_err(|e| config_error(e.to_string()))?),
        (None, true) => Some(periodic_word(&[SiteParams::new(1, 1.0, 0.0)], c.n.unwrap_or(2).max(1))?),
        (None, false) => None,
    };
    let dist = if explicit_word.is_some() && c.atoms.is_none() && c.distribution.is_none() {
        None
    } else if model == ModelPreset::Custom {
        let path = c.distribution.as_ref().ok_or_else(|| config_error("--model custom needs --distribution"))?;
        Some(SingleGenDistribution::from_json(&read_file(path)?).map_err(|e| match e {
            Error::Json(j) => config_error(j.to_string()),
            other => other.into(),
        })?)
    } else {
        let atoms = c.atoms.clone().unwrap_or_else(|| default_atoms(model));
        Some(preset_distribution(model, &atoms, c.branching.unwrap_or(2))?)
    };
    let distribution = dist
        .as_ref()
        .map(|d| serde_json::from_str(&d.to_json()).expect("distribution JSON round-trips"))
        .unwrap_or(Value::Null);
    let default_window = if model.is_discrete() { (-4.0, 4.0) } else { (0.5, 40.0) };
    Ok(Resolved {
        command: cmd.name().into(),
        model,
        distribution,
        window: c.window.unwrap_or(default_window),
        grid: c.grid.unwrap_or(100),
        n: c.n.unwrap_or(1000),
        trials: c.trials.unwrap_or(20),
        depth: c.depth.unwrap_or(6),
        p: c.p.unwrap_or(1.0),
        seed: c.seed.unwrap_or(0),
        period: c.period.unwrap_or(2),
        radius: c.radius,
        word: explicit_word.as_ref().map(|w| serde_json::from_str(&w.to_json()).expect("word JSON round-trips")),
        free: c.free,
        dist,
        explicit_word,
        output: c.output,
    })
}

impl Resolved {
    fn dist(&self) -> std::result::Result<&SingleGenDistribution, CliError> {
        self.dist.as_ref().ok_or_else(|| config_error("this command needs a distribution (--model/--atoms or --distribution)"))
    }

    fn word(&self, len: usize) -> std::result::Result<EnvironmentWord, CliError> {
        match &self.explicit_word {
            Some(w) if w.len() >= len => Ok(w.slice(0, len)),
            Some(w) => Err(CliError::from(Error::OutOfRange { index: len, max: w.len() })),
            None => Ok(sample_word(self.dist()?, len, self.seed)?),
        }
    }

    fn regime(&self) -> std::result::Result<DiscreteRegime, CliError> {
        match self.model {
            ModelPreset::DiscreteRbm | ModelPreset::DiscreteRwm => Ok(DiscreteRegime::Adjacency),
            ModelPreset::DiscreteRso => Ok(DiscreteRegime::Schroedinger),
            _ => {
                let sites = self.dist()?.sites();
                if sites.iter().all(|s| s.q == 0.0) {
                    Ok(DiscreteRegime::Adjacency)
                } else if sites.iter().all(|s| s.ell == 1.0) {
                    Ok(DiscreteRegime::Schroedinger)
                } else {
                    Err(Error::Precondition("discrete regime needs q = 0 or p = 1 throughout".into()).into())
                }
            }
        }
    }
}

/// Numbers in plain-text output use 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn run_command(cmd: &Command, cfg: &Resolved) -> std::result::Result<String, CliError> {
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let with_config = |mut v: Value| {
        if let Value::Object(m) = &mut v {
            m.insert("config".into(), echo.clone());
        }
        serde_json::to_string_pretty(&v).expect("output serializes") + "\n"
    };
    match cmd {
        Command::Lyapunov(_) => {
            let (lo, hi) = cfg.window;
            let grid: Vec<f64> = if cfg.grid < 2 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..cfg.grid).map(|i| lo + (hi - lo) * i as f64 / (cfg.grid - 1) as f64).collect()
            };
            let curve = lyapunov_curve(&grid, cfg.dist()?, cfg.model.map(), cfg.n, cfg.trials, cfg.seed)?;
            Ok(lyapunov_csv(&curve))
        }
        Command::Exceptional(_) => {
            let set = if cfg.model.is_discrete() {
                exceptional_set_discrete(cfg.dist()?, cfg.regime()?)?
            } else {
                exceptional_set_continuum(cfg.dist()?, cfg.window)?
            };
            let v: Value = serde_json::from_str(&set.to_json()).expect("set JSON parses");
            Ok(with_config(v))
        }
        Command::Spectrum(_) => {
            if cfg.model.is_discrete() {
                let s = almost_sure_spectrum_discrete(cfg.dist()?, cfg.period, cfg.window)?;
                Ok(bands_csv(&s.bands))
            } else {
                let sites = cfg.dist()?.sites();
                let mut all = Vec::new();
                for len in 1..=cfg.period.min(8) {
                    for code in 0..sites.len().pow(len as u32) {
                        let mut c = code;
                        let cell: Vec<SiteParams> = (0..len)
                            .map(|_| {
                                let s = sites[c % sites.len()];
                                c /= sites.len();
                                s
                            })
                            .collect();
                        all.extend(periodic_spectrum_continuum(&cell, cfg.window)?);
                    }
                }
                Ok(bands_csv(&merge_intervals(all, 1e-9)))
            }
        }
        Command::Truncspec(_) => {
            let word = cfg.word(cfg.n)?;
            let spec = truncated_eigenvalues(&word, cfg.n, cfg.window, default_grid_step(cfg.window, cfg.n))?;
            Ok(spec.to_csv())
        }
        Command::Decay(_) => {
            if cfg.model.is_discrete() {
                let r = discrete_localization_suite(cfg.dist()?, cfg.window, cfg.n, cfg.trials, cfg.seed)?;
                let v: Value = serde_json::from_str(&r.to_json()).expect("report JSON parses");
                return Ok(with_config(v));
            }
            let dist = cfg.dist()?;
            let word = cfg.word(cfg.n)?;
            let geometry = TreeGeometry::continuum(word.clone())?;
            let spec = truncated_eigenvalues(&word, cfg.n, cfg.window, default_grid_step(cfg.window, cfg.n))?;
            let mean_ell = dist.mean_ell();
            let mut s = String::from("energy,zeta,lambdaHat,rSquared,localized,lyapunov,lyapunovStderr,lyapunovRate\n");
            for (i, &e) in spec.eigenvalues.iter().enumerate() {
                let ef = eigenfunction_profile(&word, cfg.n, e)?;
                let fit = decay_rate_fit(&ef.profile, &geometry)?;
                let l = lyapunov_mc(e, dist, cfg.model.map(), 10_000, cfg.trials.max(2), derive_seed(cfg.seed, i as u64))?;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    num(e),
                    num(fit.zeta),
                    num(fit.lambda_hat),
                    num(fit.r_squared),
                    fit.localized,
                    num(l.value),
                    num(l.stderr),
                    num(l.value / mean_ell)
                ));
            }
            Ok(s)
        }
        Command::Moment(_) => {
            let word = cfg.word(cfg.depth)?;
            let radius = cfg.radius.unwrap_or(word.params[0].ell);
            // indicator of the ball of radius `radius`, edge by edge
            let mut coeffs = Vec::new();
            let mut t = 0.0;
            for s in &word.params {
                if t >= radius {
                    break;
                }
                coeffs.push([if t + s.ell <= radius { 1.0 } else { 0.0 }, 0.0, 0.0]);
                t += s.ell;
            }
            let half = dynamical_moment(&word, cfg.depth, cfg.window, cfg.p, &Psi::Quadratic(coeffs))?;
            let tree = tree_dynamical_moment(&word, cfg.depth, cfg.window, cfg.p, radius)?;
            let v = json!({
                "halfLine": serde_json::from_str::<Value>(&half.to_json()).expect("moment JSON parses"),
                "tree": serde_json::from_str::<Value>(&tree.to_json()).expect("moment JSON parses"),
            });
            Ok(with_config(v))
        }
        Command::Equiv(_) => {
            let word = cfg.word(cfg.depth + 1)?;
            let tree = build_finite_tree(&word, cfg.depth, word.params[0].b)?;
            let r = decomposition_equivalence(&tree, cfg.regime()?)?;
            let v: Value = serde_json::from_str(&r.to_json()).expect("report JSON parses");
            Ok(with_config(v))
        }
    }
}

/// Writes through a temporary file in the target directory and renames it.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn configure_threads() {
    if let Some(n) = std::env::var("RADLOC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists, which is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn report(e: &CliError) {
    let doc = json!({ "error": e.kind, "message": e.message, "exitCode": e.code });
    eprintln!("{doc}");
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let result = resolve(&cli.command).and_then(|cfg| {
        let text = run_command(&cli.command, &cfg)?;
        match &cfg.output {
            Some(path) => {
                write_atomic(path, &text).map_err(|e| CliError { code: exit::FAILURE, kind: "io", message: e.to_string() })?;
                let mut sidecar = path.clone().into_os_string();
                sidecar.push(".config.json");
                let echo = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
                write_atomic(Path::new(&sidecar), &echo)
                    .map_err(|e| CliError { code: exit::FAILURE, kind: "io", message: e.to_string() })?;
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError { code: exit::FAILURE, kind: "io", message: e.to_string() })?;
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            report(&e);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("0.5:40").unwrap(), (0.5, 40.0));
        assert_eq!(parse_window("-4:4").unwrap(), (-4.0, 4.0));
        assert!(parse_window("3:1").is_err());
        assert!(parse_window("3").is_err());
    }

    #[test]
    fn presets_populate_distributions() {
        let rlm = preset_distribution(ModelPreset::Rlm, &[1.0, 3.0], 2).unwrap();
        assert_eq!(rlm.sites(), vec![SiteParams::new(2, 1.0, 0.0), SiteParams::new(2, 3.0, 0.0)]);
        let rkm = preset_distribution(ModelPreset::Rkm, &[0.0, 0.5], 3).unwrap();
        assert_eq!(rkm.sites()[1], SiteParams::new(3, 1.0, 0.5));
        let err = preset_distribution(ModelPreset::Rbm, &[2.0], 2).unwrap_err();
        assert_eq!(err.code, exit::DISTRIBUTION);
        assert!(err.message.contains("two distinct points"));
        assert_eq!(preset_distribution(ModelPreset::Rbm, &[2.5, 3.0], 2).unwrap_err().code, exit::CONFIG);
    }

    #[test]
    fn config_overrides_flags() {
        let flags = RunConfig { n: Some(10), seed: Some(1), ..Default::default() };
        let file: RunConfig = serde_json::from_str(r#"{"seed": 9, "window": [1.0, 2.0]}"#).unwrap();
        let m = merge(&flags, Some(file));
        assert_eq!((m.n, m.seed, m.window), (Some(10), Some(9), Some((1.0, 2.0))));
    }
}
