use clap::{Args, Parser, Subcommand};
use normsol::dynamics::{evolve, stability_probe, EvolveOptions};
use normsol::fibering::{
    check_j1_j2, descartes_certificate, energy_floor_mminus, fiber_scan, grad_floor_mminus, mempty_guard,
    numeric_critical_points, DescartesNorms,
};
use normsol::field::{read_field_csv, write_field_csv, ComplexField, RadialField, RadialGrid};
use normsol::nonlinearity::{
    check_assumptions, check_g_conditions, compute_c0, make_multipower, C0Scan, ModelFile, MultiPowerSpec,
    NonlinearityModel, SampleGrid,
};
use normsol::scalar_bounds::{bound_from_above, bound_from_below};
use normsol::solver::{m_curve_row, minimize_local, minimize_on_mminus, suggest_mminus_grid, SolverOptions};
use normsol::thresholds::{geometry, sobolev_constant};
use normsol::Error;
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_BLOWUP: u8 = 4;
const EXIT_ACCURACY: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "normsol", version, about = "Normalized solutions of mixed-growth NLS on radial grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// model file (TOML); default is the (7/3, 13/3) two-power model in N = 3
    #[arg(long)]
    model: Option<PathBuf>,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// grid nodes
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// grid radius; the excited solver picks one when absent
    #[arg(long)]
    rmax: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Command {
    /// assumption checks and C₀
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// threshold geometry for one mass
    Thresholds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
    },
    /// negative-energy local minimizer
    Ground {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
    },
    /// positive-energy solution on M₋
    Excited {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
    },
    /// fiber map of a field (a Gaussian of mass ρ without --field)
    Fiber {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// scan range as lo,hi
        #[arg(long, default_value = "1e-3,1e2")]
        s: String,
    },
    /// time evolution of a field, optionally after s⋆
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long = "T", default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        /// perturbation size for a stability probe against the input field
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        energy_tol: f64,
        #[arg(long, default_value_t = 1e3)]
        blowup_factor: f64,
        #[arg(long, default_value_t = 1)]
        record_every: usize,
    },
    /// m_{R₀}(ρ) table over comma-separated masses
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// small-mass guard constants, floors, and optional scalar bound queries
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
        /// A,B,p for the bound from above
        #[arg(long)]
        above: Option<String>,
        /// A,B,p,q for the bound from below
        #[arg(long)]
        below: Option<String>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Check { common }
            | Command::Thresholds { common, .. }
            | Command::Ground { common, .. }
            | Command::Excited { common, .. }
            | Command::Fiber { common, .. }
            | Command::Evolve { common, .. }
            | Command::Sweep { common, .. }
            | Command::Bounds { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Thresholds { .. } => "thresholds",
            Command::Ground { .. } => "ground",
            Command::Excited { .. } => "excited",
            Command::Fiber { .. } => "fiber",
            Command::Evolve { .. } => "evolve",
            Command::Sweep { .. } => "sweep",
            Command::Bounds { .. } => "bounds",
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidSpec(_)
            | Error::Domain(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::NoPositiveF
            | Error::AboveThreshold { .. } => EXIT_CONFIG,
            Error::Shooting { .. }
            | Error::NotProjectable(_)
            | Error::NotOnManifold { .. }
            | Error::EscapedWell { .. }
            | Error::Stall { .. }
            | Error::WrongBranch(_)
            | Error::RhoTooLarge { .. } => EXIT_SOLVER,
            Error::Accuracy { .. } | Error::NonFinite(_) | Error::Resolution(_) | Error::StepSize { .. } => {
                EXIT_ACCURACY
            }
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(format!("io: {e}"))
    }
}

/// What a command leaves behind besides its files.
struct Outcome {
    code: u8,
    tags: Vec<String>,
    files: Vec<String>,
}

struct Ctx {
    out: PathBuf,
    files: Vec<String>,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, tags: &[String], value: &T) -> Result<(), Failure> {
        let doc = json!({ "tags": tags, "result": value });
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), Failure> {
        let path = self.path(name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{header}")?;
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    fn write_field<T>(&mut self, name: &str, u: &normsol::field::Field<T>) -> Result<(), Failure>
    where
        T: normsol::field::FieldValue + Into<num_complex::Complex64>,
    {
        let path = self.path(name);
        self.files.push(format!("{name}.json"));
        write_field_csv(&path, u)?;
        Ok(())
    }
}

fn load_model(common: &Common) -> Result<NonlinearityModel, Failure> {
    match &common.model {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::config(format!("model file {} does not exist", p.display())));
            }
            Ok(ModelFile::load(p)?.build()?)
        }
        None => Ok(make_multipower(MultiPowerSpec::two_power((7, 3), (13, 3)), 3)?),
    }
}

fn positive(name: &str, v: f64) -> Result<f64, Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::config(format!("--{name} must be positive, got {v}")))
    }
}

fn parse_list(name: &str, text: &str, len: Option<usize>) -> Result<Vec<f64>, Failure> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("--{name}: {e}")))?;
    if let Some(k) = len {
        if vals.len() != k {
            return Err(Failure::config(format!("--{name} expects {k} comma-separated numbers")));
        }
    }
    Ok(vals)
}

fn grid_for(model: &NonlinearityModel, common: &Common, default_rmax: f64) -> Result<std::sync::Arc<RadialGrid>, Failure> {
    let rmax = positive("rmax", common.rmax.unwrap_or(default_rmax))?;
    Ok(RadialGrid::new(model.dim(), common.n, rmax)?)
}

fn run(cmd: &Command) -> Result<Outcome, Failure> {
    let common = cmd.common();
    std::fs::create_dir_all(&common.out)?;
    let mut ctx = Ctx {
        out: common.out.clone(),
        files: vec![],
    };
    let model = load_model(common)?;
    let mut code = 0;
    let tags: Vec<String> = match cmd {
        Command::Check { .. } => {
            let rep = check_assumptions(&model, SampleGrid::default());
            let g = check_g_conditions(&model, SampleGrid::default());
            let c0 = compute_c0(&model, C0Scan::default())?;
            let mut tags: Vec<String> = rep.entries.iter().chain(&g.entries).map(|e| e.id.clone()).collect();
            tags.push("eq:C0".into());
            ctx.write_json(
                "check.json",
                &tags,
                &json!({ "assumptions": rep, "g_conditions": g, "c0": c0, "all_ok": rep.all_ok() }),
            )?;
            if !rep.all_ok() {
                log::warn!("model fails at least one assumption check");
                code = EXIT_CONFIG;
            }
            tags
        }
        Command::Thresholds { rho, .. } => {
            let rep = geometry(&model, positive("rho", *rho)?, &[])?;
            let tags = rep.tags.clone();
            ctx.write_json("thresholds.json", &tags, &rep)?;
            tags
        }
        Command::Ground { rho, .. } => {
            let grid = grid_for(&model, common, 30.0)?;
            let res = minimize_local(&model, positive("rho", *rho)?, &grid, &SolverOptions::default())?;
            let tags = res.tags.clone();
            ctx.write_json("ground.json", &tags, &res)?;
            ctx.write_field("ground.csv", &res.field)?;
            if !res.converged {
                code = EXIT_SOLVER;
            }
            tags
        }
        Command::Excited { rho, .. } => {
            let rho = positive("rho", *rho)?;
            let grid = match common.rmax {
                Some(_) => grid_for(&model, common, 0.0)?,
                None => suggest_mminus_grid(&model, rho, common.n)?,
            };
            let res = minimize_on_mminus(&model, rho, &grid, &SolverOptions::default())?;
            let tags = res.tags.clone();
            ctx.write_json("excited.json", &tags, &res)?;
            ctx.write_field("excited.csv", &res.field)?;
            if !res.converged {
                code = EXIT_SOLVER;
            }
            tags
        }
        Command::Fiber { field, rho, s, .. } => {
            let range = parse_list("s", s, Some(2))?;
            let u = match field {
                Some(p) => read_field_csv(p)?.real_part(),
                None => {
                    let grid = grid_for(&model, common, 20.0)?;
                    let mut u = RadialField::gaussian(grid, 1.0, positive("rho", *rho)?);
                    u.close_boundary();
                    u
                }
            };
            let scan = fiber_scan(&model, &u, range[0], range[1], 2001)?;
            let cert = check_j1_j2(&scan);
            let descartes = match model.multipower_spec() {
                Some(spec) => {
                    let norms = DescartesNorms::of(spec, &u);
                    let c = descartes_certificate(spec, model.dim(), &norms)?;
                    let found = numeric_critical_points(spec, model.dim(), &norms);
                    Some(json!({ "certificate": c, "numeric_critical_points": found }))
                }
                None => None,
            };
            let mut tags = cert.tags.clone();
            if descartes.is_some() {
                tags.push("app:B1:descartes".into());
            }
            ctx.write_json("fiber.json", &tags, &json!({ "scan": scan, "certificate": cert, "descartes": descartes }))?;
            let rows = scan.s.iter().zip(&scan.phi).zip(&scan.dphi).map(|((a, b), c)| vec![*a, *b, *c]);
            ctx.write_csv("fiber.csv", "s,phi,dphi", rows)?;
            tags
        }
        Command::Evolve {
            field,
            dt,
            t_end,
            s,
            eps,
            energy_tol,
            blowup_factor,
            record_every,
            ..
        } => {
            let psi = read_field_csv(field)?;
            let s = positive("s", *s)?;
            let is_real = psi.values().iter().all(|z| z.im == 0.0);
            if let Some(eps) = eps {
                if !is_real {
                    return Err(Failure::config("a stability probe needs a real reference field"));
                }
                let rep = stability_probe(&model, &psi.real_part(), *eps, *t_end, positive("dt", *dt)?, common.seed)?;
                let tr = rep.trace.as_ref().expect("probe keeps its trace");
                write_trace(&mut ctx, tr)?;
                let tags = rep.tags.clone();
                ctx.write_json("stability.json", &tags, &rep)?;
                if rep.blowup_time.is_some() {
                    code = EXIT_BLOWUP;
                }
                tags
            } else {
                let psi0: ComplexField = if s == 1.0 {
                    psi.clone()
                } else if is_real {
                    psi.real_part().scale_star(s)?.to_complex()
                } else {
                    return Err(Failure::config("--s needs a real input field"));
                };
                let opts = EvolveOptions {
                    dt: positive("dt", *dt)?,
                    t_end: positive("T", *t_end)?,
                    record_every: (*record_every).max(1),
                    energy_tol: positive("energy-tol", *energy_tol)?,
                    blowup_factor: positive("blowup-factor", *blowup_factor)?,
                    reference: if s == 1.0 && is_real { Some(psi.real_part()) } else { None },
                    ..EvolveOptions::default()
                };
                let tr = evolve(&model, &psi0, &opts)?;
                write_trace(&mut ctx, &tr)?;
                let mut tags = vec!["eq:time".to_string(), "le:inst:virial".to_string()];
                if tr.blew_up() {
                    tags.push("blowup".into());
                    code = EXIT_BLOWUP;
                }
                let summary = json!({
                    "steps": tr.steps,
                    "blowup_time": tr.blowup_time,
                    "mass_drift": tr.mass_drift(),
                    "energy_drift": tr.energy_drift(),
                    "virial_defect": tr.virial_defect(),
                    "dt_history": tr.dt_history,
                    "s": s,
                });
                ctx.write_json("evolve.json", &tags, &summary)?;
                tags
            }
        }
        Command::Sweep { rho, jobs, .. } => {
            let rhos = parse_list("rho", rho, None)?;
            for &r in &rhos {
                positive("rho", r)?;
            }
            let grid = grid_for(&model, common, 40.0)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads((*jobs).max(1))
                .build()
                .map_err(|e| Failure::config(e.to_string()))?;
            let opts = SolverOptions::default();
            let rows: Vec<_> = pool.install(|| {
                use rayon::prelude::*;
                rhos.par_iter().map(|&r| m_curve_row(&model, r, &grid, &opts)).collect()
            });
            let tags = vec!["le:sub".to_string(), "URamRa".to_string()];
            ctx.write_json("sweep.json", &tags, &rows)?;
            let csv = rows.iter().map(|r| {
                vec![
                    r.rho,
                    r.m.unwrap_or(f64::NAN),
                    r.r0.unwrap_or(f64::NAN),
                    r.lambda.unwrap_or(f64::NAN),
                ]
            });
            ctx.write_csv("sweep.csv", "rho,m,r0,lambda", csv)?;
            if rows.iter().any(|r| !r.converged) {
                code = EXIT_SOLVER;
            }
            tags
        }
        Command::Bounds { rho, above, below, .. } => {
            let s_const = sobolev_constant(model.dim())?;
            let mut doc = serde_json::Map::new();
            let guard = mempty_guard(&model, s_const);
            doc.insert("guard".into(), to_value(guard.as_ref().ok())?);
            if let Some(rho) = rho {
                let rho = positive("rho", *rho)?;
                doc.insert("grad_floor_mminus".into(), to_value(grad_floor_mminus(&model, rho, s_const).ok())?);
                let c0 = compute_c0(&model, C0Scan::default())?;
                let floor = energy_floor_mminus(c0.value, s_const, model.dim(), rho).ok();
                doc.insert("energy_floor_mminus".into(), to_value(floor)?);
            }
            if let Some(text) = above {
                let v = parse_list("above", text, Some(3))?;
                doc.insert("above".into(), to_value(bound_from_above(v[0], v[1], v[2])?)?);
            }
            if let Some(text) = below {
                let v = parse_list("below", text, Some(4))?;
                doc.insert("below".into(), to_value(bound_from_below(v[0], v[1], v[2], v[3])?)?);
            }
            let tags: Vec<String> = match guard {
                Ok(g) => g.tags,
                Err(_) => vec!["le:Mempty".into()],
            };
            ctx.write_json("bounds.json", &tags, &Value::Object(doc))?;
            tags
        }
    };
    Ok(Outcome {
        code,
        tags,
        files: ctx.files,
    })
}

fn to_value<T: Serialize>(v: T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::config(e.to_string()))
}

fn write_trace(ctx: &mut Ctx, tr: &normsol::dynamics::EvolutionTrace) -> Result<(), Failure> {
    let rows = (0..tr.t.len()).map(|k| {
        vec![
            tr.t[k],
            tr.mass[k],
            tr.energy[k],
            tr.grad_norm[k],
            tr.v[k],
            tr.dv[k],
            tr.m[k],
            tr.dist.get(k).copied().unwrap_or(f64::NAN),
        ]
    });
    ctx.write_csv("trace.csv", "t,mass,energy,gradnorm,V,dV,M,dist", rows)
}

fn write_manifest(cmd: &Command, out: &Path, code: u8, wall: f64, outcome: Option<&Outcome>, error: Option<&str>) {
    let doc = json!({
        "command": cmd.name(),
        "config": cmd,
        "version": normsol::VERSION,
        "wall_time_s": wall,
        "exit_code": code,
        "tags": outcome.map(|o| o.tags.clone()).unwrap_or_default(),
        "files": outcome.map(|o| o.files.clone()).unwrap_or_default(),
        "error": error,
    });
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    if let Err(e) = std::fs::write(out.join("manifest.json"), text + "\n") {
        log::warn!("could not write the manifest: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NORMSOL_LOG", "warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(&cli.command);
    let wall = start.elapsed().as_secs_f64();
    let out = &cli.command.common().out;
    match result {
        Ok(o) => {
            write_manifest(&cli.command, out, o.code, wall, Some(&o), None);
            if o.code == EXIT_BLOWUP {
                eprintln!("blow-up detected");
            }
            ExitCode::from(o.code)
        }
        Err(f) => {
            if out.is_dir() {
                write_manifest(&cli.command, out, f.code, wall, None, Some(&f.msg));
            }
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
