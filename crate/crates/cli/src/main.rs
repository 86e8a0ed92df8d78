use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use scalelab::camera::{self, Camera, Series};
use scalelab::convolve::ConvolutionMethod;
use scalelab::experiments::{self, ExperimentKind, ExperimentSpec, ReferenceSpec};
use scalelab::extrema::{detect, DetectorProfile};
use scalelab::keypoint::{read_keypoints_csv, write_keypoints_csv, Keypoint};
use scalelab::matching::{
    new_lost_rates, occurrence_matrix, stability_and_precision, write_rates_csv, MatchTolerance,
};
use scalelab::scalespace::{build_scale_space, ScaleSpaceConfig};
use scalelab::{config, io, parallel, plot, Error};

#[derive(Parser)]
#[command(name = "scalelab", version, about = "Gaussian scale-space and DoG keypoint stability toolkit")]
struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian-blur an image.
    Convolve {
        input: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value = "dct")]
        method: ConvolutionMethod,
    },
    /// Write every scale-space level of an image.
    Scalespace { input: PathBuf },
    /// Detect DoG keypoints and write them as CSV.
    Detect { input: PathBuf },
    /// Simulate a series of camera acquisitions from a reference image.
    Simulate {
        /// Reference image; a synthetic scene is rendered when omitted.
        reference: Option<PathBuf>,
    },
    /// Match keypoint sets and write occurrence, stability and rate tables.
    Match {
        #[arg(required = true, num_args = 2..)]
        keypoints: Vec<PathBuf>,
        /// Series manifest mapping each set to the common frame.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run an experiment.
    Experiment { kind: ExperimentKind },
    /// Turn a runner CSV into plot data and an SVG.
    Plot { csv: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum SimulatedSeries {
    #[default]
    Translation,
    Zoom,
    Noise,
    WrongBlur,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateConfig {
    series: SimulatedSeries,
    reference: ReferenceSpec,
    c: f64,
    s_factor: f64,
    n_images: usize,
    noise_sigma: f64,
    zoom: Vec<f64>,
    delta_c: f64,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            series: SimulatedSeries::Translation,
            reference: ReferenceSpec::default(),
            c: 0.8,
            s_factor: 10.0,
            n_images: 10,
            noise_sigma: 0.0,
            zoom: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            delta_c: 0.1,
            seed: 1,
        }
    }
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> scalelab::Result<T> {
    match path {
        Some(p) => config::load(p),
        None => Ok(T::default()),
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    match &cli.out {
        Some(p) => Ok(p),
        None => bail!(Error::Config("--out <dir> is required".into())),
    }
}

fn write_csv_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut fs::File) -> scalelab::Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write(&mut f)?;
    Ok(())
}

fn simulate(cli: &Cli, reference: &Option<PathBuf>) -> Result<()> {
    let mut cfg: SimulateConfig = load_or_default(&cli.config)?;
    if let Some(p) = reference {
        cfg.reference.path = Some(p.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = out_dir(cli)?;
    let cam = Camera::new(&cfg.reference.load()?);
    let series: Series = match cfg.series {
        SimulatedSeries::Translation => {
            camera::make_translation_series(&cam, cfg.c, cfg.s_factor, cfg.noise_sigma, cfg.n_images, cfg.seed)?
        }
        SimulatedSeries::Zoom => camera::make_zoom_series(&cam, cfg.c, cfg.s_factor, &cfg.zoom, cfg.seed)?,
        SimulatedSeries::Noise => {
            camera::make_noise_series(&cam, cfg.c, cfg.s_factor, cfg.noise_sigma, cfg.n_images, cfg.seed)?
        }
        SimulatedSeries::WrongBlur => {
            camera::wrong_blur_series(&cam, cfg.c, cfg.delta_c, cfg.n_images, cfg.s_factor, cfg.seed)?
        }
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files: Vec<String> = (0..series.len()).map(|i| format!("img_{i:03}.pfm")).collect();
    for (im, f) in series.images.iter().zip(&files) {
        io::write_image(im, dir.join(f))?;
    }
    write_csv_file(&dir.join("manifest.csv"), |w| series.write_manifest(w, &files))?;
    log::info!("wrote {} images to {}", series.len(), dir.display());
    Ok(())
}

fn match_sets(cli: &Cli, inputs: &[PathBuf], manifest: &Option<PathBuf>) -> Result<()> {
    let tol: MatchTolerance = load_or_default(&cli.config)?;
    tol.validate()?;
    let dir = out_dir(cli)?;
    let mut sets: Vec<Vec<Keypoint>> = inputs
        .iter()
        .map(|p| -> Result<Vec<Keypoint>> {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(read_keypoints_csv(f)?)
        })
        .collect::<Result<_>>()?;
    if let Some(m) = manifest {
        let f = fs::File::open(m).with_context(|| format!("opening {}", m.display()))?;
        let shots = camera::read_manifest(f)?;
        if shots.len() != sets.len() {
            bail!(Error::Config(format!(
                "manifest lists {} images but {} keypoint files were given",
                shots.len(),
                sets.len()
            )));
        }
        for (set, (_, shot)) in sets.iter_mut().zip(&shots) {
            *set = shot.to_common_frame(set);
        }
    }
    let labels: Vec<String> = inputs
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let mut matrix = occurrence_matrix(&sets, &tol)?;
    matrix.rows = labels.clone();
    let rates = new_lost_rates(&sets, &tol)?;
    let report = stability_and_precision(&sets, &tol, 0.5)?;
    write_csv_file(&dir.join("occurrence.csv"), |w| matrix.write_csv(w))?;
    write_csv_file(&dir.join("stability.csv"), |w| matrix.write_stability_csv(w))?;
    write_csv_file(&dir.join("rates.csv"), |w| write_rates_csv(w, &labels, &rates))?;
    write_csv_file(&dir.join("curve.csv"), |w| report.write_curve_csv(w))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    parallel::set_threads(cli.threads);
    match &cli.command {
        Command::Convolve { input, sigma, method } => {
            let Some(out) = &cli.out else {
                bail!(Error::Config("--out <file> is required".into()));
            };
            let blurred = method.apply(&io::read_image(input)?, *sigma)?;
            io::write_image(&blurred, out)?;
        }
        Command::Scalespace { input } => {
            let cfg: ScaleSpaceConfig = load_or_default(&cli.config)?;
            build_scale_space(&io::read_image(input)?, &cfg)?.dump(out_dir(cli)?)?;
        }
        Command::Detect { input } => {
            let profile: DetectorProfile = load_or_default(&cli.config)?;
            let kps = detect(&io::read_image(input)?, &profile)?;
            match &cli.out {
                Some(p) => write_csv_file(p, |w| write_keypoints_csv(w, &kps))?,
                None => write_keypoints_csv(std::io::stdout().lock(), &kps)?,
            }
            log::info!("{} keypoints", kps.len());
        }
        Command::Simulate { reference } => simulate(cli, reference)?,
        Command::Match { keypoints, manifest } => match_sets(cli, keypoints, manifest)?,
        Command::Experiment { kind } => {
            let mut spec = match &cli.config {
                Some(p) => ExperimentSpec::load_for(Some(*kind), p)?,
                None => ExperimentSpec::new(*kind),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(o) = &cli.out {
                spec.out_dir = Some(o.clone());
            }
            if spec.out_dir.is_none() {
                bail!(Error::Config("experiment needs --out <dir> or out_dir in the config".into()));
            }
            experiments::run(&spec)?;
        }
        Command::Plot { csv } => {
            for p in plot::emit_plot_data(csv, out_dir(cli)?)? {
                log::info!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config_error() => 2,
        Some(Error::Numerical(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
