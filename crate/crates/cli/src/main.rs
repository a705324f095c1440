use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cutpoisson::geometry::GeometryDescriptor;
use cutpoisson::solver::SpectrumSummary;
use cutpoisson::sparse::CsrMatrix;
use cutpoisson::stencil::BcKind;
use cutpoisson::study::{run_perturbation_sweep, run_study, SpectrumMode, StudyConfig, Task};
use cutpoisson::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cutpoisson",
    version,
    about = "Cut-cell finite-volume Poisson convergence studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study.
    Run(StudyArgs),
    /// Compare the study of a base geometry with perturbed geometries.
    Sweep(StudyArgs),
    /// Eigenvalues of a Matrix Market file.
    Eig {
        matrix: PathBuf,
        #[arg(long, default_value = "dense")]
        spectrum: SpectrumMode,
        /// Write all eigenvalues here as `re,im` rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StudyArgs {
    /// JSON study configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Geometry name, or an inline JSON descriptor.
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long)]
    bc_eb: Option<BcKind>,
    #[arg(long)]
    bc_box: Option<BcKind>,
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<Task>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add the export-matrix task.
    #[arg(long)]
    export_matrix: bool,
    /// `dense` or `arnoldi:k`; adds the spectrum task.
    #[arg(long)]
    spectrum: Option<SpectrumMode>,
    #[arg(long)]
    verbatim_2d_solution: bool,
    /// Solution id, e.g. `paper-2d` or `polynomial(4)`.
    #[arg(long)]
    manufactured: Option<String>,
}

fn parse_geometry(s: &str) -> Result<GeometryDescriptor> {
    if s.trim_start().starts_with('{') {
        Ok(serde_json::from_str(s)?)
    } else {
        Ok(GeometryDescriptor::named(s))
    }
}

impl StudyArgs {
    fn config(&self) -> Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => {
                let geometry = self
                    .geometry
                    .as_deref()
                    .ok_or_else(|| Error::Config("give --config or --geometry".into()))?;
                let order = self.order.unwrap_or(4);
                let grids = self.grids.clone().unwrap_or_else(|| vec![32, 64, 128]);
                StudyConfig::new(parse_geometry(geometry)?, order, grids)
            }
        };
        if let (Some(g), Some(_)) = (&self.geometry, &self.config) {
            cfg.geometry = parse_geometry(g)?;
        }
        if let Some(o) = self.order {
            cfg.order = o;
        }
        if let Some(g) = &self.grids {
            cfg.grids = g.clone();
        }
        if let Some(b) = self.bc_eb {
            cfg.bc_eb = b;
        }
        if let Some(b) = self.bc_box {
            cfg.bc_box = b;
        }
        if let Some(t) = &self.tasks {
            cfg.tasks = t.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.display().to_string());
        }
        if let Some(s) = self.spectrum {
            cfg.spectrum = s;
            if !cfg.has(Task::Spectrum) {
                cfg.tasks.push(Task::Spectrum);
            }
        }
        if self.export_matrix && !cfg.has(Task::ExportMatrix) {
            cfg.tasks.push(Task::ExportMatrix);
        }
        if self.verbatim_2d_solution {
            cfg.verbatim = true;
        }
        if let Some(m) = &self.manufactured {
            cfg.manufactured = Some(m.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run(args) => {
            let out = run_study(&args.config()?)?;
            writeln!(stdout, "{}", out.report.geometry)?;
            out.report.write_rates_csv(&mut stdout)?;
            for l in &out.report.levels {
                if let Some(s) = l.spectrum {
                    writeln!(stdout, "N={} spectrum: {}", l.n, serde_json::to_string(&s)?)?;
                }
            }
            Ok(true)
        }
        Command::Sweep(args) => {
            let cfg = args.config()?;
            if cfg.perturbations.is_empty() {
                return Err(Error::Config(
                    "sweep needs a `perturbations` list in the config".into(),
                ));
            }
            let sweep = run_perturbation_sweep(&cfg, &cfg.perturbations)?;
            writeln!(stdout, "geometry,n,smallest_kappa,solution_l1")?;
            for (row, rep) in sweep.smallest_kappa.iter().zip(&sweep.reports) {
                for ((n, k), l) in row.smallest_kappa.iter().zip(&rep.levels) {
                    let e = l.solution.map_or(f64::NAN, |s| s.l1);
                    writeln!(stdout, "\"{}\",{n},{k:.3e},{e:.3e}", row.geometry)?;
                }
            }
            for s in &sweep.spread {
                writeln!(
                    stdout,
                    "N={} max relative spread {:.3}",
                    s.n, s.max_relative_spread
                )?;
            }
            if !sweep.passed {
                log::error!(
                    "solution errors spread more than {:.0}%",
                    100.0 * sweep.tolerance
                );
            }
            Ok(sweep.passed)
        }
        Command::Eig {
            matrix,
            spectrum,
            out,
        } => {
            let a = CsrMatrix::read_matrix_market(BufReader::new(File::open(&matrix)?))?;
            let ev = match spectrum {
                SpectrumMode::Dense => cutpoisson::solver::dense_eigenvalues(&a.to_dense())?,
                SpectrumMode::Arnoldi(k) => {
                    use cutpoisson::solver::{arnoldi_eigenvalues, ArnoldiOptions, Which};
                    let opts = ArnoldiOptions::default();
                    let mut ev = arnoldi_eigenvalues(&a, k, Which::LargestMagnitude, &opts)?;
                    ev.extend(arnoldi_eigenvalues(&a, k, Which::NearestZero, &opts)?);
                    ev
                }
            };
            if let Some(p) = out {
                let mut f = File::create(p)?;
                writeln!(f, "re,im")?;
                for e in &ev {
                    writeln!(f, "{:.12e},{:.12e}", e.re, e.im)?;
                }
            }
            let s = SpectrumSummary::from_eigenvalues(&ev)?;
            writeln!(stdout, "{}", serde_json::to_string(&s)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
