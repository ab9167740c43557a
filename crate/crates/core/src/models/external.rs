//! External executable models over a line-oriented stdin/stdout protocol.
//!
//! Protocol `tmsbi-blackbox 1`: the engine first writes the header line
//! `# tmsbi-blackbox 1 n_theta=<p> n_y=<q>`, then one request per line,
//! `<t> <θ_1> … <θ_p>`, whitespace separated. The executable answers each
//! request with one line `<y_1> … <y_q>`, or `error <message>`. Lines
//! starting with `#` sent by the engine are comments. Additive Gaussian noise
//! `noise_std · η` is applied by the engine, so the executable must be
//! deterministic.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::ForwardModel;

pub const BLACKBOX_PROTOCOL: &str = "tmsbi-blackbox 1";

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalModel {
    command: PathBuf,
    args: Vec<String>,
    n_theta: usize,
    n_y: usize,
    noise_std: f64,
    session: Mutex<Option<Session>>,
}

impl ExternalModel {
    pub fn new(
        command: PathBuf,
        args: Vec<String>,
        n_theta: usize,
        n_y: usize,
        noise_std: f64,
    ) -> Result<Self> {
        if n_theta == 0 || n_y == 0 || !(noise_std >= 0.0) {
            return Err(Error::Config("external model: bad dimensions or noise".into()));
        }
        Ok(ExternalModel {
            command,
            args,
            n_theta,
            n_y,
            noise_std,
            session: Mutex::new(None),
        })
    }

    fn spawn(&self) -> Result<Session> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Model(format!("cannot start {}: {e}", self.command.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        writeln!(
            stdin,
            "# {BLACKBOX_PROTOCOL} n_theta={} n_y={}",
            self.n_theta, self.n_y
        )?;
        Ok(Session {
            child,
            stdin,
            stdout,
        })
    }

    fn request(&self, theta: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut guard = self.session.lock().map_err(|_| Error::Model("session poisoned".into()))?;
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let s = guard.as_mut().expect("session present");
        let mut line = t.to_string();
        for v in theta {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        let io = |e: std::io::Error| Error::Model(format!("black-box i/o: {e}"));
        writeln!(s.stdin, "{line}").map_err(io)?;
        s.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if s.stdout.read_line(&mut reply).map_err(io)? == 0 {
            *guard = None;
            return Err(Error::Model("black-box closed its output".into()));
        }
        let reply = reply.trim();
        if let Some(msg) = reply.strip_prefix("error") {
            return Err(Error::Model(msg.trim().to_string()));
        }
        let out: Vec<f64> = reply
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Model(format!("unparsable black-box reply `{reply}`: {e}")))?;
        Ok(out)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(mut g) = self.session.lock() {
            if let Some(s) = g.take() {
                let Session { mut child, stdin, .. } = s;
                drop(stdin);
                let _ = child.wait();
            }
        }
    }
}

impl ForwardModel for ExternalModel {
    fn id(&self) -> String {
        format!("external:{}", self.command.display())
    }

    fn n_theta(&self) -> usize {
        self.n_theta
    }

    fn n_y(&self) -> usize {
        self.n_y
    }

    fn draw_noise(&self, _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.n_y).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn evaluate(&self, theta: &[f64], _nuisance: &[f64], noise: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut y = self.request(theta, t)?;
        for (v, e) in y.iter_mut().zip(noise) {
            *v += self.noise_std * e;
        }
        Ok(y)
    }
}
