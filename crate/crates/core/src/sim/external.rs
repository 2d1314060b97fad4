//! Executable adapter for user-supplied simulators.
//!
//! The adapter program receives one JSON request on standard input:
//!
//! ```json
//! {"e": [..], "f": [..] | null, "seed": 7, "duration": 10.0, "dt": 0.01}
//! ```
//!
//! `f` is `null` for the high-fidelity run. It must print one trajectory
//! on standard output:
//!
//! ```json
//! {"start_time": 0.0, "dt": 0.01, "channels": ["gap"], "samples": [[..]]}
//! ```
//!
//! `samples` is channel-major. A nonzero exit status is reported as an
//! adapter error together with the program's standard error.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{Simulator, SimulatorSpec};
use crate::error::{Error, Result};
use crate::space::{EnvironmentConfig, FidelitySetting, Seed, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub e: Vec<f64>,
    pub f: Option<Vec<f64>>,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
}

#[derive(Deserialize)]
struct AdapterResponse {
    start_time: f64,
    dt: f64,
    channels: Vec<String>,
    samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExternalSimulator {
    spec: SimulatorSpec,
    program: PathBuf,
    args: Vec<String>,
}

impl ExternalSimulator {
    pub fn new(spec: SimulatorSpec, program: impl Into<PathBuf>, args: Vec<String>) -> Result<Self> {
        spec.validate()?;
        Ok(ExternalSimulator { spec, program: program.into(), args })
    }

    fn adapter_err(&self, message: impl Into<String>) -> Error {
        Error::Adapter { program: self.program.clone(), message: message.into() }
    }

    pub fn call(&self, request: &AdapterRequest) -> Result<Trajectory> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.adapter_err(format!("cannot start: {e}")))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let body = serde_json::to_vec(request)?;
            stdin
                .write_all(&body)
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| self.adapter_err(format!("writing request: {e}")))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| self.adapter_err(format!("waiting for adapter: {e}")))?;
        if !out.status.success() {
            return Err(self.adapter_err(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let resp: AdapterResponse = serde_json::from_slice(&out.stdout)
            .map_err(|e| self.adapter_err(format!("bad trajectory JSON: {e}")))?;
        let traj = Trajectory::new(resp.start_time, resp.dt, resp.channels, resp.samples)?;
        if let Some(missing) = self.spec.channels.iter().find(|c| traj.channel(c).is_none()) {
            return Err(self.adapter_err(format!("response lacks channel `{missing}`")));
        }
        Ok(traj)
    }
}

impl Simulator for ExternalSimulator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        self.call(&AdapterRequest {
            e: e.values().to_vec(),
            f: None,
            seed: seed.0,
            duration: self.spec.duration(),
            dt: self.spec.base_dt,
        })
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        self.spec.check_fidelity(f)?;
        self.call(&AdapterRequest {
            e: e.values().to_vec(),
            f: Some(f.values().to_vec()),
            seed: seed.0,
            duration: self.spec.duration(),
            dt: self.spec.base_dt,
        })
    }
}
