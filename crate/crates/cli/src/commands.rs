use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::thread;

use ndarray::Array2;

use volseg::image::write_palette_png;
use volseg::layer::{vptv_backward, vptv_forward, FeatureTensor, LayerConfig};
use volseg::ot::{self, duals_csv, entropic_ot, entropy, exact_ot_oracle, transport_cost};
use volseg::segment::{dice, trace_csv};
use volseg::synth::{generate, SynthKind};
use volseg::{segment, Image, LabelMap, SegmentResult};

use crate::config::{RunConfig, VolumeArg};
use crate::error::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_image(path: &Path) -> Result<Image, CliError> {
    Image::load(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

pub fn read_tensor(path: &Path) -> Result<FeatureTensor, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    Ok(FeatureTensor::read_from(BufReader::new(f))?)
}

pub fn write_tensor(path: &Path, t: &FeatureTensor) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok(t.write_to(BufWriter::new(f))?)
}

fn load_truth(path: &Path, phases: usize) -> Result<LabelMap, CliError> {
    let truth = LabelMap::from_gray_levels(&load_image(path)?)?;
    let levels = truth.labels.iter().max().map_or(0, |m| m + 1);
    if levels > phases {
        return Err(CliError::Config(format!(
            "ground truth has {levels} gray levels but only {phases} phases are segmented"
        )));
    }
    Ok(truth)
}

/// Summary of one segmentation run, as reported in `metrics.csv`.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub iterations: usize,
    pub converged: bool,
    pub mean_max_probability: f64,
    /// Symmetric dice per phase when ground truth was given.
    pub dice: Option<Vec<f64>>,
}

/// Segments `input` and writes every artifact into `out`.
pub fn segment_one(cfg: &RunConfig, input: &Path, out: &Path) -> Result<RunSummary, CliError> {
    let img = load_image(input)?;
    let volumes = cfg.volume.to_spec(cfg.phases, img.pixels())?;
    let truth = match &cfg.ground_truth {
        Some(p) => {
            let t = load_truth(p, cfg.phases)?;
            if (t.height, t.width) != (img.height, img.width) {
                return Err(CliError::Config("ground truth and input differ in size".into()));
            }
            Some(t)
        }
        None => None,
    };
    let r = segment(&img, cfg.phases, volumes.as_ref(), &cfg.params(), cfg.seed)?;
    create_dir(out)?;

    let mut header = vec![
        format!("input={}", input.display()),
        format!("height={} width={}", img.height, img.width),
    ];
    header.extend(cfg.header());
    header.push(format!("iterations={} converged={}", r.iterations(), r.converged));
    write_outputs(&r, cfg.phases, out, &header)?;

    let masses = r.soft.masses();
    let mut csv = String::new();
    for h in &header {
        let _ = writeln!(csv, "# {h}");
    }
    csv.push_str("phase,target_count,soft_mass,hard_count,dice,dice_overlap_ratio\n");
    let mut dice_all = Vec::new();
    for i in 0..cfg.phases {
        let target = volumes.as_ref().map_or(String::new(), |v| v.counts()[i].to_string());
        let (d, o) = match &truth {
            Some(t) => {
                let s = dice(&r.labels, t, i)?;
                dice_all.push(s.symmetric);
                (s.symmetric.to_string(), s.overlap_ratio.to_string())
            }
            None => (String::new(), String::new()),
        };
        let _ = writeln!(csv, "{i},{target},{},{},{d},{o}", masses[i], r.labels.count(i));
    }
    write_text(&out.join("metrics.csv"), &csv)?;

    Ok(RunSummary {
        iterations: r.iterations(),
        converged: r.converged,
        mean_max_probability: r.soft.mean_max_probability(),
        dice: truth.map(|_| dice_all),
    })
}

fn write_outputs(r: &SegmentResult, phases: usize, out: &Path, header: &[String]) -> Result<(), CliError> {
    let (h, w) = (r.soft.height, r.soft.width);
    r.labels.to_gray(phases).save(out.join("labels.pgm"), false, header)?;
    write_palette_png(&out.join("labels.png"), w, h, &r.labels.labels)?;
    for i in 0..phases {
        let mut hdr = header.to_vec();
        hdr.push(format!("soft mask of phase {i}"));
        Image::from_gray(&r.soft.mask(i)).save(out.join(format!("soft_{i}.pgm")), true, &hdr)?;
    }
    write_tensor(
        &out.join("soft.vptv"),
        &FeatureTensor {
            height: h,
            width: w,
            data: r.soft.u.clone(),
        },
    )?;
    write_text(&out.join("trace.csv"), &trace_csv(&r.trace, header))?;
    write_text(&out.join("stats.txt"), &r.stats.to_text())?;
    Ok(())
}

pub fn cmd_segment(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Config("no --input given".into()));
    }
    for input in &cfg.inputs {
        let out = if cfg.inputs.len() == 1 {
            cfg.out.clone()
        } else {
            cfg.out.join(input.file_stem().unwrap_or_default())
        };
        let s = segment_one(cfg, input, &out)?;
        if !s.converged {
            eprintln!(
                "warning: {} did not converge in {} iterations; wrote the last iterate",
                input.display(),
                s.iterations
            );
        }
        let dice = s
            .dice
            .map(|d| format!(", dice {}", d.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("/")))
            .unwrap_or_default();
        println!("{} -> {} ({} iterations{dice})", input.display(), out.display(), s.iterations);
    }
    Ok(())
}

/// Parses a comma list of floats.
pub fn float_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("'{t}' is not a number")))
        })
        .collect()
}

/// Runs every combination of `eps`, `lambda` and volume over all inputs, in
/// up to `jobs` threads. Each run writes into its own directory.
pub fn cmd_sweep(
    cfg: &RunConfig,
    eps: &[f64],
    lambda: &[f64],
    volumes: &[VolumeArg],
    jobs: usize,
) -> Result<(), CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Config("no --input given".into()));
    }
    let mut runs = Vec::new();
    for input in &cfg.inputs {
        for &e in eps {
            for &l in lambda {
                for v in volumes {
                    let mut c = cfg.clone();
                    c.eps = e;
                    c.lambda = l;
                    c.volume = v.clone();
                    c.params().validate()?;
                    let dir = cfg.out.join(format!("run_{:03}", runs.len()));
                    runs.push((c, input.clone(), dir));
                }
            }
        }
    }
    create_dir(&cfg.out)?;
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<RunSummary, CliError>>> = (0..runs.len()).map(|_| None).collect();
    for (batch, slots) in runs.chunks(jobs).zip(results.chunks_mut(jobs)) {
        thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|(c, input, dir)| s.spawn(move || segment_one(c, input, dir)))
                .collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("sweep worker panicked"));
            }
        });
    }

    let mut csv = String::from("# sweep summary\nrun,input,eps,lambda,volume,iterations,converged,mean_max_probability,dice\n");
    for (k, ((c, input, _), res)) in runs.iter().zip(results).enumerate() {
        let s = res.expect("every run produces a result")?;
        let d = s
            .dice
            .map(|d| d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{k},{},{},{},\"{}\",{},{},{},{d}",
            input.display(),
            c.eps,
            c.lambda,
            c.volume,
            s.iterations,
            s.converged,
            s.mean_max_probability
        );
    }
    write_text(&cfg.out.join("summary.csv"), &csv)?;
    println!("{} runs -> {}", runs.len(), cfg.out.display());
    Ok(())
}

pub fn cmd_synth(kind: &str, size: usize, noise: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let kind: SynthKind = kind.parse()?;
    let s = generate(kind, size, noise, seed)?;
    create_dir(out)?;
    let header = vec![
        format!("synthetic kind={kind:?} size={size} noise_variance={noise} seed={seed}"),
        format!(
            "ratios={}",
            s.ratios().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
        ),
    ];
    let ext = if s.image.channels == 3 { "ppm" } else { "pgm" };
    s.image.save(out.join(format!("image.{ext}")), true, &header)?;
    s.truth.to_gray(s.phases).save(out.join("truth.pgm"), false, &header)?;
    let mut info = String::new();
    let _ = writeln!(info, "kind={kind:?}\nsize={size}\nnoise_variance={noise}\nseed={seed}\nphases={}", s.phases);
    let _ = writeln!(
        info,
        "ratios={}",
        s.ratios().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
    );
    write_text(&out.join("info.txt"), &info)?;
    println!("wrote {}/image.{ext} and truth.pgm", out.display());
    Ok(())
}

/// Marginals and cost of the transport example: `a = (2,5,3)`, `b = 1_10`,
/// `C_ij = (2i - j)^2` with 1-based indices.
pub fn fig1_problem() -> (Vec<f64>, Vec<f64>, Array2<f64>) {
    let c = Array2::from_shape_fn((3, 10), |(i, j)| {
        let d = 2.0 * (i + 1) as f64 - (j + 1) as f64;
        d * d
    });
    (vec![2.0, 5.0, 3.0], vec![1.0; 10], c)
}

pub fn cmd_fig1(eps: &[f64], tol: f64, out: &Path) -> Result<(), CliError> {
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(CliError::Config(format!("eps must be > 0, got {e}")));
    }
    let (a, b, c) = fig1_problem();
    let (_, exact) = exact_ot_oracle(&a, &b, c.view())?;
    create_dir(out)?;
    let mut summary = String::from("# a=2,5,3 b=1x10 C_ij=(2i-j)^2\n");
    let _ = writeln!(summary, "# exact_cost={exact} tol={tol}");
    summary.push_str("eps,iterations,converged,residual,entropy,cost,exact_cost\n");
    for &e in eps {
        let sol = entropic_ot(&a, &b, c.view(), e, tol)?;
        ot::write_coupling_csv(&out.join(format!("coupling_eps{e}.csv")), sol.coupling.view(), e)?;
        write_text(&out.join(format!("duals_eps{e}.csv")), &duals_csv(&sol.f, &sol.g, e))?;
        let _ = writeln!(
            summary,
            "{e},{},{},{},{},{},{exact}",
            sol.iterations,
            sol.converged,
            sol.residual,
            entropy(sol.coupling.view()),
            transport_cost(sol.coupling.view(), c.view())
        );
        if !sol.converged {
            eprintln!("warning: eps={e} stopped at residual {:.3e} > {tol}", sol.residual);
        }
    }
    write_text(&out.join("summary.csv"), &summary)?;
    println!("wrote {} couplings to {}", eps.len(), out.display());
    Ok(())
}

pub struct LayerArgs {
    pub input: PathBuf,
    pub eps: f64,
    pub lambda: f64,
    pub depth: usize,
    pub tau_q: Option<f64>,
    pub volume: VolumeArg,
    pub out: PathBuf,
}

impl LayerArgs {
    fn config(&self, o: &FeatureTensor) -> Result<LayerConfig, CliError> {
        let mut cfg = LayerConfig::new(self.eps, self.lambda, self.depth);
        if let Some(t) = self.tau_q {
            cfg.tau_q = t;
        }
        cfg.volumes = self.volume.to_spec(o.phases(), o.height * o.width)?;
        Ok(cfg)
    }
}

pub fn cmd_layer_forward(args: &LayerArgs) -> Result<(), CliError> {
    let o = read_tensor(&args.input)?;
    let cfg = args.config(&o)?;
    let (u, _) = vptv_forward(&o, &cfg)?;
    write_tensor(
        &args.out,
        &FeatureTensor {
            height: u.height,
            width: u.width,
            data: u.u,
        },
    )
}

/// Re-runs the (deterministic) forward pass to rebuild the cache, then
/// applies the backward pass to the upstream gradient.
pub fn cmd_layer_backward(args: &LayerArgs, grad: &Path) -> Result<(), CliError> {
    let o = read_tensor(&args.input)?;
    let g = read_tensor(grad)?;
    if g.data.dim() != o.data.dim() || (g.height, g.width) != (o.height, o.width) {
        return Err(CliError::Config("gradient tensor shape differs from the input".into()));
    }
    let cfg = args.config(&o)?;
    let (_, cache) = vptv_forward(&o, &cfg)?;
    let grad_o = vptv_backward(&g.data, &cache, &cfg)?;
    write_tensor(&args.out, &grad_o)
}

pub fn cmd_metrics(labels: &Path, truth: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let pred = LabelMap::from_gray_levels(&load_image(labels)?)?;
    let phases = pred
        .labels
        .iter()
        .chain(&LabelMap::from_gray_levels(&load_image(truth)?)?.labels)
        .max()
        .map_or(1, |m| m + 1);
    let truth = load_truth(truth, phases)?;
    let mut csv = format!("# labels={} ground_truth=present\nphase,dice,dice_overlap_ratio,pred_count,truth_count\n", labels.display());
    for i in 0..phases {
        let s = dice(&pred, &truth, i)?;
        let _ = writeln!(
            csv,
            "{i},{},{},{},{}",
            s.symmetric,
            s.overlap_ratio,
            pred.count(i),
            truth.count(i)
        );
    }
    match out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
