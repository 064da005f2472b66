//! `qsp`: command-line front end for the stored-program simulator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qsp_core::channels::{choi_of_channel, ChannelJson, ChoiJson};
use qsp_core::genextreme::{self, GenExtremeSpec, MixtureSpec};
use qsp_core::json::{matrix_to_value, MatrixJson};
use qsp_core::opbasis::{affine_rep, affine_residual, build_basis};
use qsp_core::progvm::{self, RunMode, RunOptions};
use qsp_core::random::rng_from_seed;
use qsp_core::recovery::{bell_recover, povm_recover};
use qsp_core::teleport::{compose_sequence, enumerate_sequence_paths, symmetric_factorize, SequenceMode};
use qsp_core::{
    gates, BasisFlavor, ChoiNormalization, ChoiState, DensityOperator, ProgramState, QspError, Result,
    Tolerances, UnitaryGate,
};

#[derive(Parser)]
#[command(name = "qsp", version, about = "Stored-program quantum computation with Choi program states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a program script in direct or stored-program mode.
    Run {
        #[arg(long)]
        program: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Stored)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock time in the report (breaks byte-for-byte reproducibility).
        #[arg(long)]
        timing: bool,
    },
    /// Choi state of a channel given as {"dim_in", "dim_out", "kraus"}.
    Choi {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long, value_enum, default_value_t = NormArg::State)]
        normalization: NormArg,
    },
    /// Split a unitary into two symmetric unitaries.
    Factor {
        #[arg(long)]
        unitary: PathBuf,
    },
    /// Affine (Pauli-transfer) representation of a unitary.
    Affine {
        #[arg(long)]
        unitary: PathBuf,
        #[arg(long, value_enum, default_value_t = BasisArg::Weyl)]
        basis: BasisArg,
    },
    /// Compose program states of a gate list (matrix-product order).
    Compose {
        #[arg(long)]
        gates: PathBuf,
        #[arg(long, value_enum, default_value_t = SeqArg::Symmetric)]
        mode: SeqArg,
        #[arg(long)]
        enumerate_branches: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gen-extreme channel tools.
    Genext {
        #[command(subcommand)]
        action: GenextAction,
    },
    /// Teleport the universal gate set and classify affine representations.
    DemoUniversal,
    /// Recover a channel's action from its Choi state.
    Recover {
        #[arg(long)]
        choi: PathBuf,
        #[arg(long)]
        choi2: Option<PathBuf>,
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::Povm)]
        scheme: SchemeArg,
    },
}

#[derive(Subcommand)]
enum GenextAction {
    /// Spec JSON → Choi JSON.
    Build {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Choi JSON → spec JSON.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Spec JSON → circuit unitary and Kraus operators.
    Synthesize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Mixture JSON {"weights", "components"} → exact and sampled outputs.
    Mix {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Stored,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    State,
    Matrix,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Weyl,
    Gellmann,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeqArg {
    Symmetric,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Bell,
    Povm,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| QspError::Validation(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_str(&read(path)?).map_err(|e| QspError::Validation(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| QspError::Validation(format!("{what}: {e}")))
}

fn tolerances() -> Result<Tolerances> {
    match std::env::var("QSP_TOL") {
        Ok(text) => Tolerances::parse_override(&text),
        Err(_) => Ok(Tolerances::default()),
    }
}

/// A gate given by name (`"H"`) or as a matrix object.
fn unitary_from_value(v: &Value, tol: &Tolerances) -> Result<UnitaryGate> {
    match v {
        Value::String(name) => Ok(gates::by_name(name)?.0),
        other => {
            let m: MatrixJson = from_value(other.clone(), "unitary")?;
            UnitaryGate::with_tolerance(m.to_matrix()?, tol.unitary)
        }
    }
}

/// A state given as a ket string (`"|01>"`) or a density-matrix object.
fn state_from_value(v: &Value) -> Result<DensityOperator> {
    match v {
        Value::String(ket) => {
            let digits = ket.trim().trim_start_matches('|').trim_end_matches('>').trim_end_matches('⟩');
            let d_guess = 2usize;
            let k = usize::from_str_radix(digits, d_guess as u32)
                .map_err(|_| QspError::Validation(format!("state: cannot parse ket {ket:?} (qubit kets only)")))?;
            DensityOperator::basis(d_guess.pow(digits.len() as u32), k)
        }
        other => {
            let m: MatrixJson = from_value(other.clone(), "state")?;
            DensityOperator::new(m.to_matrix()?)
        }
    }
}

fn choi_from_value(v: Value) -> Result<ChoiState> {
    // Accept either a Choi object or a channel, converting the latter.
    if v.get("kraus").is_some() {
        let ch: ChannelJson = from_value(v, "channel")?;
        return choi_of_channel(&ch.to_channel()?);
    }
    ChoiState::from_json(&from_value::<ChoiJson>(v, "choi")?)
}

fn program_json(p: &ProgramState) -> Value {
    json!({
        "sites": [p.sites.0, p.sites.1],
        "pure": p.pure,
        "symmetric": p.symmetric,
        "pauli_frame": p.pauli_frame,
        "nominal": p.nominal.as_ref().map(matrix_to_value),
        "choi": p.choi.to_json(),
    })
}

fn execute(cli: Cli) -> Result<Value> {
    let tol = tolerances()?;
    match cli.command {
        Command::Run { program, mode, shots, seed, out, timing } => {
            let script = progvm::parse_with(&read(&program)?, &tol)?;
            let mode = match mode {
                ModeArg::Direct => RunMode::Direct,
                ModeArg::Stored => RunMode::Stored,
            };
            let report = progvm::run(&script, &RunOptions { mode, seed, shots, tolerances: tol, timing })?;
            // Printed verbatim so stdout and --out are byte-identical.
            let text = report.to_json();
            if let Some(path) = out {
                fs::write(&path, format!("{text}\n"))
                    .map_err(|e| QspError::Validation(format!("{}: {e}", path.display())))?;
            }
            Ok(Value::String(text))
        }
        Command::Choi { channel, normalization } => {
            let ch: ChannelJson = from_value(read_json(&channel)?, "channel")?;
            let choi = choi_of_channel(&ch.to_channel()?)?;
            let norm = match normalization {
                NormArg::State => ChoiNormalization::State,
                NormArg::Matrix => ChoiNormalization::Matrix,
            };
            Ok(serde_json::to_value(choi.with_normalization(norm).to_json()).expect("serialises"))
        }
        Command::Factor { unitary } => {
            let u = unitary_from_value(&read_json(&unitary)?, &tol)?;
            let f = symmetric_factorize(&u)?;
            Ok(json!({
                "ul": matrix_to_value(f.ul.matrix()),
                "ur": matrix_to_value(f.ur.matrix()),
                "reconstruction_residual": f.reconstruction_residual(&u),
                "symmetry_residual": f.symmetry_residual(),
            }))
        }
        Command::Affine { unitary, basis } => {
            let u = unitary_from_value(&read_json(&unitary)?, &tol)?;
            let flavor = match basis {
                BasisArg::Weyl => BasisFlavor::Weyl,
                BasisArg::Gellmann => BasisFlavor::GellMann,
            };
            let b = build_basis(u.dim(), flavor)?;
            let rep = affine_rep(&u, &b)?;
            Ok(json!({
                "d": u.dim(),
                "basis": flavor,
                "matrix": matrix_to_value(rep.matrix()),
                "is_generalized_permutation": rep.is_generalized_permutation(),
                "unitarity_defect": rep.unitarity_defect(),
                "residual": affine_residual(u.matrix(), &b, &rep),
            }))
        }
        Command::Compose { gates: path, mode, enumerate_branches, seed } => {
            let list = read_json(&path)?;
            let items = list.as_array().ok_or_else(|| QspError::Validation("gates: expected a JSON array".into()))?;
            let gate_list = items.iter().map(|v| unitary_from_value(v, &tol)).collect::<Result<Vec<_>>>()?;
            let mode = match mode {
                SeqArg::Symmetric => SequenceMode::SymmetricSplit,
                SeqArg::Raw => SequenceMode::Raw,
            };
            let product = gate_list.iter().skip(1).fold(gate_list.first().map(|g| g.matrix().clone()), |acc, g| {
                acc.map(|a| a * g.matrix())
            });
            let target = product.map(|m| qsp_core::channels::program_state_of_unitary(&UnitaryGate::with_tolerance(m, 1e-8).expect("product of unitaries")));
            let res = compose_sequence(&gate_list, mode, &mut rng_from_seed(seed))?;
            let mut out = json!({
                "program": program_json(&res.program),
                "pauli_frame": res.frame,
                "herald_log": res.log,
                "programs_consumed": res.programs_consumed,
                "fidelity": target.as_ref().map(|t| res.program.frame_corrected().fidelity(t)),
            });
            if enumerate_branches {
                let paths = enumerate_sequence_paths(&gate_list, mode, 4096)?;
                let table: Vec<Value> = paths
                    .iter()
                    .map(|p| {
                        json!({
                            "heralds": p.heralds,
                            "probability": p.probability,
                            "pauli_frame": p.program.pauli_frame,
                            "fidelity": target.as_ref().map(|t| p.program.frame_corrected().fidelity(t)),
                        })
                    })
                    .collect();
                out["branches"] = Value::Array(table);
            }
            Ok(out)
        }
        Command::Genext { action } => match action {
            GenextAction::Build { input } => {
                let spec: GenExtremeSpec = from_value(read_json(&input)?, "spec")?;
                Ok(serde_json::to_value(genextreme::build_choi(&spec)?.to_json()).expect("serialises"))
            }
            GenextAction::Extract { input } => {
                let choi = choi_from_value(read_json(&input)?)?;
                Ok(serde_json::to_value(genextreme::extract_spec(&choi)?).expect("serialises"))
            }
            GenextAction::Synthesize { input } => {
                let spec: GenExtremeSpec = from_value(read_json(&input)?, "spec")?;
                let circ = genextreme::synthesize_circuit(&spec)?;
                Ok(json!({
                    "w_t": matrix_to_value(circ.w_t.matrix()),
                    "register_dim": circ.register_dim,
                    "channel": ChannelJson::from_channel(&circ.kraus),
                }))
            }
            GenextAction::Mix { input, state, shots, seed } => {
                let mix: MixtureSpec = from_value(read_json(&input)?, "mixture")?;
                let rho = state_from_value(&read_json(&state)?)?;
                let sim = genextreme::mixture_simulate(&mix, &rho, shots, seed)?;
                let mut v = serde_json::to_value(&sim).expect("serialises");
                v["trace_distance"] = json!(sim.trace_distance());
                Ok(v)
            }
        },
        Command::DemoUniversal => Ok(serde_json::to_value(progvm::demo_universal_set()?).expect("serialises")),
        Command::Recover { choi, choi2, state, scheme } => {
            let c1 = choi_from_value(read_json(&choi)?)?;
            let c2 = choi2.map(|p| read_json(&p).and_then(choi_from_value)).transpose()?;
            let rho = state_from_value(&read_json(&state)?)?;
            match scheme {
                SchemeArg::Bell => Ok(serde_json::to_value(bell_recover(&c1, &rho)?).expect("serialises")),
                SchemeArg::Povm => {
                    let outs = (0..2).map(|b| povm_recover(&c1, c2.as_ref(), &rho, b)).collect::<Result<Vec<_>>>()?;
                    Ok(serde_json::to_value(outs).expect("serialises"))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(v) => {
            let text = match v {
                Value::String(s) => s,
                other => serde_json::to_string_pretty(&other).expect("serialises"),
            };
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
