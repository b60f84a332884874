//! Scenario loading, flag overrides, artifact bookkeeping and the run
//! manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fundspan::market::MarketSpec;
use fundspan::scenario::{preset, Format, ScenarioFile};
use serde::Serialize;
use thiserror::Error;

use crate::{FormatArg, RunArgs};

#[derive(Debug, Error)]
pub enum Failure {
    /// Bad flags or names; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A validation or assertion did not hold; exit code 1.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] fundspan::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Outcome = Result<(), Failure>;

/// Written last into the output directory; lists every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub scenario: String,
    pub spec_hash: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub status: String,
    pub outputs: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// State shared by one subcommand invocation.
pub struct Run {
    pub file: ScenarioFile,
    pub spec: MarketSpec,
    /// Scenario source; used to point violations at lines.
    pub text: String,
    pub out: PathBuf,
    pub args: RunArgs,
    outputs: Vec<String>,
}

impl Run {
    pub fn wants(&self, f: Format) -> bool {
        self.file.output.formats.contains(&f)
    }

    /// Creates `name` in the output directory and records it.
    pub fn write<F>(&mut self, name: &str, body: F) -> Outcome
    where
        F: FnOnce(&mut BufWriter<File>) -> Outcome,
    {
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Outcome {
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn load(args: &RunArgs) -> Result<(ScenarioFile, String, String), Failure> {
    match (&args.scenario, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read scenario {}: {e}", path.display())))?;
            let (file, _) = ScenarioFile::parse(&text)?;
            Ok((file, text, path.display().to_string()))
        }
        (None, Some(name)) => {
            let file = preset(name).map_err(|e| Failure::Usage(e.to_string()))?;
            let text = file.to_toml();
            Ok((file, text, format!("preset:{name}")))
        }
        (None, None) => Err(Failure::Usage("one of --scenario or --preset is required".into())),
    }
}

fn apply_overrides(file: &mut ScenarioFile, args: &RunArgs) {
    if let Some(s) = args.seed {
        file.mc.seed = s;
    }
    if let Some(p) = args.paths {
        file.mc.paths = p;
    }
    if let Some(s) = args.steps {
        file.mc.steps = s;
    }
    if let Some(g) = args.grid {
        file.grid.nx = g.nx;
        file.grid.ny = g.ny;
        file.grid.nz = g.nz;
        file.grid.t_steps = g.nt;
    }
    if let Some(f) = args.format {
        file.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Binary => Format::Binary,
        }];
    }
    if let Some(o) = &args.out {
        file.output.directory = o.display().to_string();
    }
}

/// Loads the scenario, runs `body`, and writes the manifest last. The
/// manifest is written for assertion failures too, with the failure as
/// its status.
pub fn execute(name: &str, args: &RunArgs, body: fn(&mut Run) -> Outcome) -> Outcome {
    let started = now();
    let (mut file, text, source) = load(args)?;
    apply_overrides(&mut file, args);
    let spec = file.spec()?;
    let out = PathBuf::from(&file.output.directory);
    std::fs::create_dir_all(&out)?;
    let mut run = Run {
        file,
        spec,
        text,
        out,
        args: args.clone(),
        outputs: Vec::new(),
    };
    let effective = run.file.to_toml();
    run.write_text("scenario.toml", &effective)?;
    let result = body(&mut run);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    write_manifest(&run.out, RunManifest {
        tool: "fundspan",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name.to_string(),
        scenario: source,
        spec_hash: run.spec.hash(),
        seed: run.file.mc.seed,
        started_unix: started,
        finished_unix: now(),
        status,
        outputs: run.outputs.clone(),
    })?;
    result
}

pub fn write_manifest(dir: &Path, manifest: RunManifest) -> Outcome {
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn manifest_now(subcommand: &str, outputs: Vec<String>, started: f64) -> RunManifest {
    RunManifest {
        tool: "fundspan",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: subcommand.to_string(),
        scenario: String::new(),
        spec_hash: String::new(),
        seed: 0,
        started_unix: started,
        finished_unix: now(),
        status: "ok".into(),
        outputs,
    }
}

pub fn start_time() -> f64 {
    now()
}
