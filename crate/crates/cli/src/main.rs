use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multipass::critical::{
    check_octopole_nondegeneracy, default_localmin_delta, octopole_kernel_vectors, qq_structure, verify_localmin_property,
    SublevelConnector, KERNEL_TOL, NONDEGENERACY_TOL,
};
use multipass::interaction::interaction_expansion;
use multipass::mountainpass::{
    dipole_test_model, minmax_optimize, quadrupole_test_model, relax_to_local_minimum, surgery, transition_state,
    DiscretePath, MinmaxOptions, ModelEnergy,
};
use multipass::multipole::{compute_multipoles, direct_coulomb};
use multipass::toyquantum::{check_vdw_positivity, dress_path, HermitianFamily, ToyMolecule};
use multipass::{ChargeDistribution, Config, MultipoleSet, Rotation};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde_json::json;

mod output;

use output::{write_csv, write_json, Sink};

/// Exit code for usage errors (`EX_USAGE`).
const EXIT_USAGE: u8 = 64;
/// Exit code for invalid inputs and violated preconditions.
const EXIT_FAILURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "multipass", version, about = "Multipolar interaction landscapes and mountain-pass paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cartesian multipole moments of a molecule file as JSON.
    Multipoles {
        file: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Interaction table and expansion energy of two molecules.
    Interact(InteractArgs),
    /// Critical points of the leading interaction on SO(3) × SO(3).
    #[command(subcommand)]
    Critical(CriticalCommand),
    /// Min-max path, surgery and transition state on a model energy.
    MountainPass(MountainPassArgs),
    /// Positivity check of the toy van der Waals coefficient.
    VdwToy {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dresses a Hermitian family with states; CSV of (t, Rayleigh, E(t)).
    Dress {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct InteractArgs {
    first: PathBuf,
    second: PathBuf,
    #[arg(long = "L", default_value_t = 100.0)]
    l: f64,
    #[arg(long = "U", default_value = "1,0,0,0")]
    u: String,
    #[arg(long = "V", default_value = "1,0,0,0")]
    v: String,
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// `L1:L2:count` emits CSV (L, value, direct_coulomb) at `count` evenly spaced separations.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PairSource {
    /// Two molecule files; without it unit dipoles along e₁ and `diag(2, −1, −1)` quadrupoles are used.
    #[arg(long, num_args = 2, value_names = ["FILE1", "FILE2"])]
    pair: Option<Vec<PathBuf>>,
    /// Orders `n,m` of the interaction.
    #[arg(long, default_value = "1,1")]
    nm: String,
}

#[derive(Subcommand, Debug)]
enum CriticalCommand {
    /// Monte-Carlo check that near-critical points with almost nonnegative Hessian lie below −δ.
    Scan {
        #[command(flatten)]
        source: PairSource,
        /// Defaults to the calibrated value for the case.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Path inside `{F < −δ}` between two orientation pairs `U/V`.
    Connect {
        #[command(flatten)]
        source: PairSource,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Defaults to half the connectivity threshold of the case.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Critical values and Hessian signs of the quadrupole-quadrupole energy.
    Qq {
        #[arg(long, num_args = 2, value_names = ["FILE1", "FILE2"])]
        pair: Option<Vec<PathBuf>>,
        /// Orientation `U` of the first quadrupole.
        #[arg(long, default_value = "1,0,0,0")]
        orientation: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Kernel directions and nondegeneracy of a molecule's octopole.
    Octopole {
        file: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct MountainPassArgs {
    /// Model energy JSON file, or `quadrupole-test` / `dipole-test`.
    #[arg(long)]
    model: String,
    /// Start configuration as `L/U/V` or a JSON object `{"L":…,"U":[w,x,y,z],"V":[…]}`.
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Separation beyond which the initial path is replaced by a constant-L leg.
    #[arg(long = "surgery-L")]
    surgery_l: Option<f64>,
    /// Relax both endpoints to local minima before building the path.
    #[arg(long)]
    relax: bool,
    /// Directory receiving path.csv, surgery.json and transition_state.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Failures reported as JSON on stderr.
#[derive(Debug)]
enum CliError {
    Library(multipass::Error),
    Parse { path: String, message: String },
    Io { path: String, message: String },
    Usage(String),
    StdoutClosed,
}

impl From<multipass::Error> for CliError {
    fn from(e: multipass::Error) -> Self {
        CliError::Library(e)
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Library(e) => json!({ "error": e.kind(), "message": e.to_string() }),
            CliError::Parse { path, message } => json!({ "error": "parse", "path": path, "message": message }),
            CliError::Io { path, message } => json!({ "error": "io", "path": path, "message": message }),
            CliError::Usage(message) => json!({ "error": "invalid-argument", "message": message }),
            CliError::StdoutClosed => json!({ "error": "io", "message": "stdout closed" }),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(()) | Err(CliError::StdoutClosed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

/// Caps the global rayon pool at `MULTIPASS_THREADS` when set.
fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("MULTIPASS_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("MULTIPASS_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Multipoles { file, order, output } => {
            let dist = load_molecule(&file)?;
            let set = compute_multipoles(&dist, order)?;
            write_json(&Sink::new(output), &set)
        }
        Command::Interact(args) => interact(args),
        Command::Critical(cmd) => critical(cmd),
        Command::MountainPass(args) => mountain_pass(args),
        Command::VdwToy { a, b, samples, seed, output } => {
            let a: ToyMolecule = load_json(&a)?;
            let b: ToyMolecule = load_json(&b)?;
            let report = check_vdw_positivity(&a, &b, samples, seed);
            write_json(&Sink::new(output), &report)
        }
        Command::Dress { family, eps, output } => {
            let fam: HermitianFamily = load_json(&family)?;
            let path = dress_path(&fam, None, None, eps)?;
            let rows = path.nodes.iter().map(|n| vec![n.t, n.rayleigh, n.ground_energy]);
            write_csv(&Sink::new(output), &["t", "rayleigh", "ground_energy"], rows)
        }
    }
}

fn interact(args: InteractArgs) -> CliResult<()> {
    let d1 = load_molecule(&args.first)?;
    let d2 = load_molecule(&args.second)?;
    let u = parse_rotation(&args.u, "--U")?;
    let v = parse_rotation(&args.v, "--V")?;
    let sink = Sink::new(args.output);
    if let Some(spec) = args.sweep {
        let separations = parse_sweep(&spec)?;
        let mut rows = Vec::with_capacity(separations.len());
        for l in separations {
            let (_, value) = interaction_expansion(&d1, &d2, &u, &v, l, args.order)?;
            rows.push(vec![l, value, direct_coulomb(&d1, &d2, &u, &v, l)?]);
        }
        return write_csv(&sink, &["L", "value", "direct_coulomb"], rows.into_iter());
    }
    let (table, value) = interaction_expansion(&d1, &d2, &u, &v, args.l, args.order)?;
    let direct = direct_coulomb(&d1, &d2, &u, &v, args.l)?;
    write_json(&sink, &json!({ "L": args.l, "table": table, "value": value, "direct_coulomb": direct }))
}

fn critical(cmd: CriticalCommand) -> CliResult<()> {
    match cmd {
        CriticalCommand::Scan { source, delta, samples, seed, output } => {
            let (n, m, m1, m2) = resolve_pair(&source)?;
            let delta = match delta {
                Some(d) => d,
                None => default_localmin_delta(n, m, &m1, &m2)?,
            };
            let report = verify_localmin_property(n, m, &m1, &m2, delta, samples, seed)?;
            write_json(&Sink::new(output), &report)
        }
        CriticalCommand::Connect { source, from, to, delta, output } => {
            let (n, m, m1, m2) = resolve_pair(&source)?;
            let connector = SublevelConnector::new(n, m, &m1, &m2)?;
            let delta = delta.unwrap_or(connector.delta0() / 2.0);
            let start = parse_pair(&from, "--from")?;
            let end = parse_pair(&to, "--to")?;
            let path = connector.connect(start, end, delta)?;
            let rows = path.nodes.iter().zip(&path.f_values).enumerate().map(|(k, ((u, v), f))| {
                let mut row = vec![k as f64];
                row.extend(u.quaternion());
                row.extend(v.quaternion());
                row.push(*f);
                row
            });
            let header = ["node", "u_w", "u_x", "u_y", "u_z", "v_w", "v_x", "v_y", "v_z", "F"];
            write_csv(&Sink::new(output), &header, rows)
        }
        CriticalCommand::Qq { pair, orientation, output } => {
            let (q1, q2) = match pair {
                Some(files) => {
                    let m1 = compute_multipoles(&load_molecule(&files[0])?, 2)?;
                    let m2 = compute_multipoles(&load_molecule(&files[1])?, 2)?;
                    (m1.q(), m2.q())
                }
                None => (axial_quadrupole(), axial_quadrupole()),
            };
            let u = parse_rotation(&orientation, "--orientation")?;
            write_json(&Sink::new(output), &qq_structure(&q1, &q2, &u)?)
        }
        CriticalCommand::Octopole { file, output } => {
            let set = compute_multipoles(&load_molecule(&file)?, 3)?;
            let kernel = octopole_kernel_vectors(&set.octopole, KERNEL_TOL)?;
            let kernel: Vec<[f64; 3]> = kernel.iter().map(|k| [k.x, k.y, k.z]).collect();
            let report = json!({
                "octopole": set.octopole,
                "kernel_vectors": kernel,
                "nondegenerate": check_octopole_nondegeneracy(&set.octopole, NONDEGENERACY_TOL),
            });
            write_json(&Sink::new(output), &report)
        }
    }
}

fn mountain_pass(args: MountainPassArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let surface = model.surface()?;
    let mut start = parse_config(&args.from, "--from")?;
    let mut end = parse_config(&args.to, "--to")?;
    if args.relax {
        start = relax_to_local_minimum(&surface, &start)?;
        end = relax_to_local_minimum(&surface, &end)?;
    }
    if args.nodes < 3 {
        return Err(CliError::Usage(format!("--nodes must be at least 3, got {}", args.nodes)));
    }
    let initial = DiscretePath::geodesic(&surface, &start, &end, args.nodes)?;
    let (initial, report) = match args.surgery_l {
        Some(l_star) => {
            let (path, report) = surgery(&surface, &initial, l_star)?;
            (path, Some(report))
        }
        None => (initial, None),
    };
    let opts = MinmaxOptions { iters: args.iters, ..MinmaxOptions::default() };
    let result = minmax_optimize(&surface, &initial, &opts)?;
    let ts = transition_state(&surface, &result.path)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let path_file = args.out_dir.join("path.csv");
    let rows = result.path.nodes.iter().zip(&result.path.energies).enumerate().map(|(k, (c, e))| {
        let mut row = vec![result.path.param(k), c.l];
        row.extend(c.u.quaternion());
        row.extend(c.v.quaternion());
        row.push(*e);
        row
    });
    let header = ["t", "L", "u_w", "u_x", "u_y", "u_z", "v_w", "v_x", "v_y", "v_z", "energy"];
    write_csv(&Sink::File(path_file.clone()), &header, rows)?;
    let surgery_file = args.out_dir.join("surgery.json");
    write_json(&Sink::File(surgery_file.clone()), &report)?;
    let ts_file = args.out_dir.join("transition_state.json");
    write_json(&Sink::File(ts_file.clone()), &ts)?;
    let summary = json!({
        "level": result.level,
        "accepted_sweeps": result.accepted,
        "above_endpoints": result.above_endpoints,
        "path": path_file,
        "surgery": surgery_file,
        "transition_state": ts_file,
    });
    write_json(&Sink::Stdout, &summary)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Deserializes JSON, naming the offending field path and position on failure.
fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let message = if field == "." { inner.to_string() } else { format!("field {field}: {inner}") };
        CliError::Parse { path: origin.to_string(), message }
    })
}

fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(&read_file(path)?, &path.display().to_string())
}

fn load_molecule(path: &Path) -> CliResult<ChargeDistribution> {
    let dist: ChargeDistribution = load_json(path)?;
    dist.validate()?;
    Ok(dist)
}

fn load_model(source: &str) -> CliResult<ModelEnergy> {
    match source {
        "quadrupole-test" => Ok(quadrupole_test_model()),
        "dipole-test" => Ok(dipole_test_model()),
        file => load_json(Path::new(file)),
    }
}

fn parse_rotation(text: &str, flag: &str) -> CliResult<Rotation> {
    Rotation::parse(text).map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

/// `U/V` with each rotation as a quaternion or axis-angle.
fn parse_pair(text: &str, flag: &str) -> CliResult<(Rotation, Rotation)> {
    let parts: Vec<&str> = text.split('/').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!("{flag}: expected U/V, got '{text}'")));
    }
    Ok((parse_rotation(parts[0], flag)?, parse_rotation(parts[1], flag)?))
}

/// `L/U/V` or a JSON configuration object.
fn parse_config(text: &str, flag: &str) -> CliResult<Config> {
    let config = if text.trim_start().starts_with('{') {
        parse_json::<Config>(text, flag)?
    } else {
        let parts: Vec<&str> = text.split('/').collect();
        if parts.len() != 3 {
            return Err(CliError::Usage(format!("{flag}: expected L/U/V, got '{text}'")));
        }
        let l: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("{flag}: separation '{}': {e}", parts[0])))?;
        Config { l, u: parse_rotation(parts[1], flag)?, v: parse_rotation(parts[2], flag)? }
    };
    Ok(Config::new(config.l, config.u, config.v)?)
}

/// `L1:L2:count` into `count ≥ 2` evenly spaced separations.
fn parse_sweep(text: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("--sweep: expected L1:L2:count, got '{text}'"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let l1: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let l2: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count < 2 {
        return Err(CliError::Usage("--sweep needs a count of at least 2".into()));
    }
    Ok((0..count).map(|k| l1 + (l2 - l1) * k as f64 / (count - 1) as f64).collect())
}

fn parse_orders(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--nm: expected n,m, got '{text}'"));
    let (n, m) = text.split_once(',').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

fn axial_quadrupole() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(2.0, -1.0, -1.0))
}

/// Body-frame moments from `--pair`, or the built-in unit moments of orders 1 and 2.
fn resolve_pair(source: &PairSource) -> CliResult<(usize, usize, MultipoleSet, MultipoleSet)> {
    let (n, m) = parse_orders(&source.nm)?;
    let (m1, m2) = match &source.pair {
        Some(files) => {
            (compute_multipoles(&load_molecule(&files[0])?, 4)?, compute_multipoles(&load_molecule(&files[1])?, 4)?)
        }
        None => (builtin_moment(n)?, builtin_moment(m)?),
    };
    Ok((n, m, m1, m2))
}

fn builtin_moment(order: usize) -> CliResult<MultipoleSet> {
    match order {
        1 => Ok(MultipoleSet::from_dipole(Vector3::x())),
        2 => Ok(MultipoleSet::from_quadrupole(axial_quadrupole())),
        _ => Err(CliError::Usage(format!("order {order} has no built-in moment; pass --pair FILE1 FILE2"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_inclusive() {
        assert_eq!(parse_sweep("10:20:3").unwrap(), vec![10.0, 15.0, 20.0]);
        assert!(parse_sweep("10:20:1").is_err());
        assert!(parse_sweep("10:20").is_err());
    }

    #[test]
    fn config_forms_agree() {
        let a = parse_config("2/1,0,0,0/0:0:1:1.5", "--from").unwrap();
        let b = parse_config(&serde_json::to_string(&a).unwrap(), "--from").unwrap();
        assert_eq!(a, b);
        assert!(parse_config("-1/1,0,0,0/1,0,0,0", "--from").is_err());
    }

    #[test]
    fn parse_error_names_field() {
        let text = "{\"label\": \"x\", \"declared_charge\": 0,\n \"points\": [{\"q\": 1, \"x\": [0, 0, \"a\"]}]}";
        let Err(CliError::Parse { message, .. }) = parse_json::<ChargeDistribution>(text, "mol.json") else {
            panic!("expected a parse error");
        };
        assert!(message.contains("points[0].x[2]"), "{message}");
        assert!(message.contains("line 2"), "{message}");
    }
}
