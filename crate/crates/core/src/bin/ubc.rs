use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ubc_core::cli::{compare_schedules, compile, exit_code, random_inputs, seed_from_env, summary, Artifact, CompareRow, Strategy};
use ubc_core::golden::{decode_image, encode_image, ImageFormat};
use ubc_core::hwsim::SimOptions;
use ubc_core::mapping::{HardwareSpec, Target};
use ubc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ubc", version, about = "Compile image and DNN pipelines onto push-memory accelerators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct HwArgs {
    #[arg(long, value_enum, default_value = "widefetch")]
    target: Target,
    /// Words fetched per wide access.
    #[arg(long, default_value_t = 4)]
    fw: i64,
    /// Words per memory tile.
    #[arg(long, default_value_t = 512)]
    capacity: i64,
}

impl HwArgs {
    fn spec(&self) -> Result<HardwareSpec> {
        let hw = match self.target {
            Target::DualPort => HardwareSpec::dual_port(self.capacity),
            Target::WideFetch => HardwareSpec::wide_fetch(self.capacity, self.fw),
        };
        hw.validate()?;
        Ok(hw)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Schedule, extract and map a program; writes an artifact JSON.
    Compile {
        file: PathBuf,
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long, value_enum, default_value = "auto")]
        strategy: Strategy,
        /// Artifact path (default: FILE with a .json extension).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate an artifact and diff its outputs against the interpreter.
    Simulate {
        artifact: PathBuf,
        /// Input image as NAME=PATH; missing inputs are generated from UBC_SEED.
        #[arg(long = "input", value_parser = parse_binding)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long)]
        max_cycles: Option<i64>,
        /// Write the per-cycle trace as CSV.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
        /// Directory for output images.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Compare sequential and optimized schedules; prints CSV.
    CompareSchedules {
        files: Vec<PathBuf>,
        #[command(flatten)]
        hw: HwArgs,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum Format {
    Binary,
    Text,
}

fn parse_binding(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (n, p) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((n.to_string(), PathBuf::from(p)))
}

fn app_name(p: &std::path::Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Compile { file, hw, strategy, output } => {
            let src = std::fs::read_to_string(&file)?;
            let c = compile(&src, strategy, &hw.spec()?)?;
            let out = output.unwrap_or_else(|| file.with_extension("json"));
            print!("{}", summary(&c));
            std::fs::write(&out, Artifact::new(c)?.to_json()?)?;
            println!("artifact: {}", out.display());
            Ok(0)
        }
        Cmd::Simulate { artifact, inputs, max_cycles, dump_trace, out_dir, format } => {
            let a = Artifact::from_json(&std::fs::read_to_string(&artifact)?)?;
            let c = a.compiled;
            let mut data = random_inputs(&c.program, seed_from_env());
            for (name, path) in inputs {
                let b = c.program.buffer(&name).ok_or_else(|| Error::Io(format!("no input buffer {name}")))?;
                data.insert(name, decode_image(&std::fs::read(path)?, &b.dims)?);
            }
            let opts = SimOptions { max_cycles, trace: dump_trace.is_some() };
            let (sim, rep) = c.check(&data, &opts)?;
            if let Some(p) = dump_trace {
                std::fs::write(p, sim.trace.to_csv())?;
            }
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                let fmt = match format {
                    Format::Binary => ImageFormat::Binary,
                    Format::Text => ImageFormat::Text,
                };
                for (name, vals) in &sim.outputs {
                    let dims = c.program.buffer(name).map(|b| b.dims.clone()).unwrap_or_default();
                    let ext = if matches!(fmt, ImageFormat::Text) { "pgm" } else { "bin" };
                    std::fs::write(dir.join(format!("{name}.{ext}")), encode_image(vals, &dims, fmt))?;
                }
            }
            println!("cycles {} memory accesses {}", sim.cycles, sim.memory_accesses);
            println!("{rep}");
            Ok(if rep.pass { 0 } else { 2 })
        }
        Cmd::CompareSchedules { files, hw } => {
            let hw = hw.spec()?;
            println!("{}", CompareRow::HEADER);
            for f in files {
                let src = std::fs::read_to_string(&f)?;
                match compare_schedules(&app_name(&f), &src, &hw, seed_from_env()) {
                    Ok(row) => println!("{}", row.to_csv()),
                    Err(Error::Golden(msg)) => {
                        eprintln!("error: {msg}");
                        return Ok(2);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
