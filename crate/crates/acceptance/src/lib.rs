//! Fixtures shared by the acceptance suite: a seeded fault-injecting provider and
//! a line-per-criterion reporter.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use anthro_core::provider::{GenerationRequest, GenerationResult, ProviderError, TextGenerator};
use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fault mix applied by [`ChaosProvider`], as per-request probabilities.
#[derive(Debug, Clone, Copy)]
pub struct FaultMix {
    pub timeout: f64,
    pub rejected: f64,
    pub malformed: f64,
    pub empty: f64,
}

impl Default for FaultMix {
    fn default() -> Self {
        Self {
            timeout: 0.06,
            rejected: 0.04,
            malformed: 0.08,
            empty: 0.02,
        }
    }
}

const MALFORMED: [&str; 4] = ["{\"satisfaction\": 4, \"plan\":", "```json\n{not json}\n```", "null", "[1, 2, 3]"];

/// Wraps a provider and, driven by a seeded RNG, fails requests or corrupts their output.
pub struct ChaosProvider<P> {
    inner: P,
    mix: FaultMix,
    rng: Mutex<ChaCha8Rng>,
}

impl<P> ChaosProvider<P> {
    pub fn new(inner: P, mix: FaultMix, seed: u64) -> Self {
        Self {
            inner,
            mix,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

#[async_trait]
impl<P: TextGenerator> TextGenerator for ChaosProvider<P> {
    fn id(&self) -> &str {
        "chaos"
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let (draw, pick) = {
            let mut rng = self.rng.lock().unwrap();
            (rng.random::<f64>(), rng.random_range(0..MALFORMED.len()))
        };
        let m = self.mix;
        if draw < m.timeout {
            return Err(ProviderError::Timeout(Duration::from_millis(0)));
        }
        if draw < m.timeout + m.rejected {
            return Err(ProviderError::Rejected("injected".into()));
        }
        let mut out = self.inner.generate(req).await?;
        if draw < m.timeout + m.rejected + m.malformed {
            out.text = MALFORMED[pick].to_string();
        } else if draw < m.timeout + m.rejected + m.malformed + m.empty {
            out.text.clear();
        }
        Ok(out)
    }
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Run a criterion, timing it and turning panics into failures.
pub fn check(name: &'static str, f: impl FnOnce() -> Result<String, String> + std::panic::UnwindSafe) -> Verdict {
    let start = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(f) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    let v = Verdict {
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {:<28} {} [{:.2}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.detail,
        v.elapsed.as_secs_f64()
    );
    v
}
