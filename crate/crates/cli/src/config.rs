use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;

use volseg::similarity::parse_key_values;
use volseg::{CostKind, SegParams, VolumeSpec};

use crate::error::CliError;

/// Volume constraint as given on the command line or in a config file.
///
/// `off`, a comma list of percentages (`35,65`) or fractions (`0.35,0.65`),
/// or pixel counts (`counts:3500,6500`). A list whose entries are all at most
/// 1 is read as fractions.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeArg {
    Off,
    Ratios(Vec<f64>),
    Counts(Vec<f64>),
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("'{t}' is not a number in list '{s}'")))
        })
        .collect()
}

impl FromStr for VolumeArg {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("off") || s.eq_ignore_ascii_case("none") {
            return Ok(Self::Off);
        }
        if let Some(rest) = s.strip_prefix("counts:") {
            return Ok(Self::Counts(parse_list(rest)?));
        }
        let values = parse_list(s)?;
        if values.iter().all(|v| *v <= 1.0) {
            Ok(Self::Ratios(values))
        } else {
            Ok(Self::Ratios(values.iter().map(|v| v / 100.0).collect()))
        }
    }
}

impl std::fmt::Display for VolumeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Self::Off => write!(f, "off"),
            Self::Ratios(r) => write!(f, "{}", join(r)),
            Self::Counts(c) => write!(f, "counts:{}", join(c)),
        }
    }
}

impl VolumeArg {
    pub fn to_spec(&self, phases: usize, pixels: usize) -> Result<Option<VolumeSpec>, CliError> {
        let (spec, n) = match self {
            Self::Off => return Ok(None),
            Self::Ratios(r) => {
                let total: f64 = r.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(CliError::Config(format!(
                        "volume ratios sum to {:.4} ({:.2}%); they must sum to 1 (100%)",
                        total,
                        100.0 * total
                    )));
                }
                (VolumeSpec::from_ratios(r, pixels)?, r.len())
            }
            Self::Counts(c) => (VolumeSpec::from_counts(c.clone(), pixels)?, c.len()),
        };
        if n != phases {
            return Err(CliError::Config(format!("{n} volumes given for {phases} phases")));
        }
        Ok(Some(spec))
    }
}

/// Flags shared by `segment` and `sweep`. Every flag overrides the same key
/// in `--config`.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Plain-text `key=value` file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input image(s): PGM, PPM or PNG.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub phases: Option<usize>,
    /// `off`, percentages `35,65`, fractions `0.35,0.65` or `counts:a,b`.
    #[arg(long)]
    pub volume: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Dual step; defaults to `0.5 * eps`.
    #[arg(long = "tau-q")]
    pub tau_q: Option<f64>,
    /// Outer stopping threshold on `||u_new - u_old||_F / sqrt(J)`.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// scalar, mahalanobis or emtv.
    #[arg(long)]
    pub cost: Option<String>,
    /// Refresh phase statistics every k outer iterations (0 = never).
    #[arg(long = "refresh-every")]
    pub refresh_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground-truth label image (distinct gray level per phase).
    #[arg(long = "ground-truth")]
    pub ground_truth: Option<PathBuf>,
    /// Edge-weight sharpness; 0 gives plain TV.
    #[arg(long = "edge-sharpness")]
    pub edge_sharpness: Option<f64>,
    #[arg(long = "edge-sigma")]
    pub edge_sigma: Option<f64>,
    /// Volume-potential updates per outer iteration.
    #[arg(long = "n-f-inner")]
    pub n_f_inner: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub phases: usize,
    pub volume: VolumeArg,
    pub eps: f64,
    pub lambda: f64,
    pub tau_q: Option<f64>,
    pub tol: f64,
    pub max_outer: usize,
    pub cost: CostKind,
    pub refresh_every: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub edge_sharpness: f64,
    pub edge_sigma: f64,
    pub n_f_inner: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = SegParams::default();
        Self {
            inputs: Vec::new(),
            phases: 2,
            volume: VolumeArg::Off,
            eps: p.eps,
            lambda: p.lambda,
            tau_q: None,
            tol: p.tol_u,
            max_outer: p.max_outer,
            cost: p.cost,
            refresh_every: None,
            seed: 0,
            out: PathBuf::from("out"),
            ground_truth: None,
            edge_sharpness: p.edge_sharpness,
            edge_sigma: p.edge_sigma,
            n_f_inner: p.n_f_inner,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for '{key}'")))
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_key_values(&text)? {
                cfg.apply(&k, &v)?;
            }
        }
        if !args.input.is_empty() {
            cfg.inputs = args.input.clone();
        }
        if let Some(v) = args.phases {
            cfg.phases = v;
        }
        if let Some(v) = &args.volume {
            cfg.volume = v.parse()?;
        }
        if let Some(v) = args.eps {
            cfg.eps = v;
        }
        if let Some(v) = args.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = args.tau_q {
            cfg.tau_q = Some(v);
        }
        if let Some(v) = args.tol {
            cfg.tol = v;
        }
        if let Some(v) = args.max_iter {
            cfg.max_outer = v;
        }
        if let Some(v) = &args.cost {
            cfg.cost = v.parse()?;
        }
        if let Some(v) = args.refresh_every {
            cfg.refresh_every = (v > 0).then_some(v);
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = &args.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &args.ground_truth {
            cfg.ground_truth = Some(v.clone());
        }
        if let Some(v) = args.edge_sharpness {
            cfg.edge_sharpness = v;
        }
        if let Some(v) = args.edge_sigma {
            cfg.edge_sigma = v;
        }
        if let Some(v) = args.n_f_inner {
            cfg.n_f_inner = v;
        }
        if cfg.phases < 1 {
            return Err(CliError::Config("phases must be >= 1".into()));
        }
        cfg.params().validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key.replace('-', "_").as_str() {
            "input" => self.inputs = value.split(',').map(|s| PathBuf::from(s.trim())).collect(),
            "phases" => self.phases = parse(key, value)?,
            "volume" => self.volume = value.parse()?,
            "eps" => self.eps = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "tau_q" => self.tau_q = Some(parse(key, value)?),
            "tol" => self.tol = parse(key, value)?,
            "max_iter" => self.max_outer = parse(key, value)?,
            "cost" => self.cost = value.parse()?,
            "refresh_every" => {
                let k: usize = parse(key, value)?;
                self.refresh_every = (k > 0).then_some(k);
            }
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "ground_truth" => self.ground_truth = Some(PathBuf::from(value)),
            "edge_sharpness" => self.edge_sharpness = parse(key, value)?,
            "edge_sigma" => self.edge_sigma = parse(key, value)?,
            "n_f_inner" => self.n_f_inner = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn params(&self) -> SegParams {
        let mut p = SegParams::new(self.eps, self.lambda);
        if let Some(t) = self.tau_q {
            p.tau_q = t;
        }
        p.tol_u = self.tol;
        p.max_outer = self.max_outer;
        p.cost = self.cost;
        p.refresh_every = self.refresh_every;
        p.edge_sharpness = self.edge_sharpness;
        p.edge_sigma = self.edge_sigma;
        p.n_f_inner = self.n_f_inner;
        p
    }

    /// `key=value` lines written into every output header.
    pub fn header(&self) -> Vec<String> {
        let p = self.params();
        vec![
            format!("phases={}", self.phases),
            format!("volume={}", self.volume),
            format!("eps={}", p.eps),
            format!("lambda={}", p.lambda),
            format!("tau_q={}", p.tau_q),
            format!("tol={}", p.tol_u),
            format!("max_iter={}", p.max_outer),
            format!("cost={}", p.cost),
            format!("refresh_every={}", self.refresh_every.unwrap_or(0)),
            format!("edge_sharpness={}", p.edge_sharpness),
            format!("n_f_inner={}", p.n_f_inner),
            format!("seed={}", self.seed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_forms() {
        assert_eq!("off".parse::<VolumeArg>().unwrap(), VolumeArg::Off);
        assert_eq!("35,65".parse::<VolumeArg>().unwrap(), VolumeArg::Ratios(vec![0.35, 0.65]));
        assert_eq!("0.25,0.75".parse::<VolumeArg>().unwrap(), VolumeArg::Ratios(vec![0.25, 0.75]));
        assert_eq!(
            "counts:3,7".parse::<VolumeArg>().unwrap(),
            VolumeArg::Counts(vec![3.0, 7.0])
        );
        assert!("3,x".parse::<VolumeArg>().is_err());
        let v: VolumeArg = "30,60".parse().unwrap();
        assert!(matches!(v.to_spec(2, 100), Err(CliError::Config(_))));
        let v: VolumeArg = "35,65".parse().unwrap();
        assert_eq!(v.to_spec(2, 101).unwrap().unwrap().counts(), &[35.0, 66.0]);
        assert!(v.to_spec(3, 101).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("volseg-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        fs::write(&path, "# comment\neps = 0.2\nlambda=0.3\ncost=mahalanobis\nvolume=40,60\nrefresh-every=5\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            eps: Some(0.1),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.eps, 0.1);
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.cost, CostKind::Mahalanobis);
        assert_eq!(cfg.volume, VolumeArg::Ratios(vec![0.4, 0.6]));
        assert_eq!(cfg.refresh_every, Some(5));
        assert_eq!(cfg.params().tau_q, 0.05);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply("colour", "red"), Err(CliError::Config(_))));
        assert!(matches!(cfg.apply("eps", "abc"), Err(CliError::Config(_))));
        let args = RunArgs {
            eps: Some(-1.0),
            ..Default::default()
        };
        assert!(matches!(RunConfig::resolve(&args), Err(CliError::Config(_))));
    }
}
