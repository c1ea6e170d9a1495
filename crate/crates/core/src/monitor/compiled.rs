use super::{check_lambda, MonitorArtifact, MonitorError, MonitorState};
use crate::linalg::{decode_f32_le, dot_f32};
use crate::probes::LinearHead;
use crate::trace_store::TraceRecord;

/// A head folded through projection and standardization: `weights . x + offset`.
///
/// Folding happens in `f64`; the folded weights are stored in `f32` for the
/// per-token dot product.
#[derive(Debug, Clone)]
struct FusedHead {
    weights: Vec<f32>,
    offset: f64,
}

fn fold(
    head: &LinearHead,
    projection: &[f32],
    d: usize,
    mean: &[f32],
    std: &[f32],
) -> (Vec<f64>, f64) {
    let mut weights = vec![0.0; d];
    let mut offset = head.bias as f64;
    for (i, (&w, (&mu, &sd))) in head.weights.iter().zip(mean.iter().zip(std)).enumerate() {
        let scaled = w as f64 / sd as f64;
        offset -= scaled * mu as f64;
        let row = &projection[i * d..(i + 1) * d];
        for (acc, &p) in weights.iter_mut().zip(row) {
            *acc += scaled * p as f64;
        }
    }
    (weights, offset)
}

impl FusedHead {
    fn new(folded: &(Vec<f64>, f64)) -> Self {
        Self {
            weights: folded.0.iter().map(|&w| w as f32).collect(),
            offset: folded.1,
        }
    }
}

/// Monitor with every linear stage folded into `d`-dimensional weights.
///
/// The composite `g_t` needs one dot product with the hidden state plus a
/// per-generation constant computed once from the prompt summary.
#[derive(Debug, Clone)]
pub struct CompiledMonitor {
    d: usize,
    alpha: f64,
    beta: f64,
    lambda: f64,
    threshold: Option<f64>,
    initial_m: f64,
    hazard: FusedHead,
    support: FusedHead,
    residual: FusedHead,
    combined: Vec<f32>,
    combined_offset: f64,
}

impl CompiledMonitor {
    pub fn new(art: &MonitorArtifact) -> Result<Self, MonitorError> {
        Self::with_coefficients(art, art.alpha, art.beta, art.lambda)
    }

    /// Compiles `art` with overridden score coefficients (heads unchanged).
    pub fn with_coefficients(
        art: &MonitorArtifact,
        alpha: f64,
        beta: f64,
        lambda: f64,
    ) -> Result<Self, MonitorError> {
        art.validate()?;
        check_lambda(lambda)?;
        let fm = &art.feature_map;
        let d = fm.d;
        let hazard = fold(
            &art.hazard,
            &fm.projection,
            d,
            &fm.state_mean,
            &fm.state_std,
        );
        let support = fold(
            &art.support,
            &fm.projection,
            d,
            &fm.state_mean,
            &fm.state_std,
        );
        let residual = fold(
            &art.residual,
            &fm.projection,
            d,
            &fm.resid_mean,
            &fm.resid_std,
        );
        let combined = (0..d)
            .map(|j| (hazard.0[j] - alpha * support.0[j] + beta * residual.0[j]) as f32)
            .collect();
        let combined_offset = hazard.1 - alpha * support.1 + beta * residual.1;
        let (hazard, support, residual) = (
            FusedHead::new(&hazard),
            FusedHead::new(&support),
            FusedHead::new(&residual),
        );
        Ok(Self {
            d,
            alpha,
            beta,
            lambda,
            threshold: art.threshold,
            initial_m: 0.0,
            hazard,
            support,
            residual,
            combined,
            combined_offset,
        })
    }

    pub fn with_threshold(mut self, threshold: Option<f64>) -> Self {
        self.threshold = threshold;
        self
    }

    /// Starting EMA value `m_0` (zero unless overridden).
    pub fn with_initial_m(mut self, m0: f64) -> Self {
        self.initial_m = m0;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn check(&self, v: &[f32]) -> Result<(), MonitorError> {
        if v.len() != self.d {
            return Err(MonitorError::DimensionMismatch {
                expected: self.d,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Opens a stream for one generation, caching the prompt-dependent constant.
    pub fn start(&self, prompt_summary: &[f32]) -> Result<MonitorStream<'_>, MonitorError> {
        self.check(prompt_summary)?;
        let prompt_term = -dot_f32(&self.residual.weights, prompt_summary);
        Ok(MonitorStream {
            monitor: self,
            prompt_term,
            g_offset: self.combined_offset + self.beta * prompt_term,
            threshold: self.threshold.unwrap_or(f64::INFINITY),
            state: MonitorState::with_initial(self.initial_m),
        })
    }

    /// Replays every frame of `record` through a fresh stream.
    pub fn score_trace(&self, record: &TraceRecord) -> Result<TraceScore, MonitorError> {
        if record.token_count == 0 {
            return Err(MonitorError::NoFrames);
        }
        let mut stream = self.start(&record.prompt_summary)?;
        let mut m = Vec::with_capacity(record.token_count);
        for frame in record.frame_rows() {
            m.push(stream.push(frame)?.m);
        }
        Ok(TraceScore {
            terminal_m: *m.last().expect("non-empty"),
            max_m: m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            trigger_step: stream.state.trigger_step,
            m,
        })
    }

    /// Per-token head outputs `(f, c, r)` for `record`.
    pub fn head_sequences(&self, record: &TraceRecord) -> Result<HeadSequences, MonitorError> {
        let stream = self.start(&record.prompt_summary)?;
        let mut out = HeadSequences::default();
        for frame in record.frame_rows() {
            let (f, c, r) = stream.heads(frame)?;
            out.f.push(f);
            out.c.push(c);
            out.r.push(r);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadSequences {
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDetail {
    pub t: usize,
    pub m: f64,
    pub g: f64,
    pub f: f64,
    pub c: f64,
    pub r: f64,
    pub triggered: bool,
    /// True only on the step that first crossed the threshold.
    pub fired: bool,
}

/// Monitor state for one generation.
#[derive(Debug, Clone)]
pub struct MonitorStream<'a> {
    monitor: &'a CompiledMonitor,
    prompt_term: f64,
    g_offset: f64,
    threshold: f64,
    pub state: MonitorState,
}

impl MonitorStream<'_> {
    /// Consumes `h_t`; one dot product plus the EMA update. Allocation-free.
    #[inline]
    pub fn push(&mut self, h: &[f32]) -> Result<StepDetail, MonitorError> {
        self.monitor.check(h)?;
        let g = dot_f32(&self.monitor.combined, h) + self.g_offset;
        self.advance(g)
    }

    /// Decodes one little-endian frame into `frame`, then [`push`](Self::push)es it.
    #[inline]
    pub fn push_encoded(
        &mut self,
        raw: &[u8],
        frame: &mut Vec<f32>,
    ) -> Result<StepDetail, MonitorError> {
        if raw.len() != 4 * self.monitor.d {
            return Err(MonitorError::DimensionMismatch {
                expected: self.monitor.d,
                found: raw.len() / 4,
            });
        }
        decode_f32_le(raw, frame);
        self.push(frame)
    }

    fn advance(&mut self, g: f64) -> Result<StepDetail, MonitorError> {
        if !g.is_finite() {
            return Err(MonitorError::NonFinite);
        }
        let lambda = self.monitor.lambda;
        let s = &mut self.state;
        s.m = lambda * g + (1.0 - lambda) * s.m;
        s.t += 1;
        s.last_g = g;
        let fired = s.check_trigger(self.threshold);
        Ok(StepDetail {
            t: s.t,
            m: s.m,
            g,
            f: f64::NAN,
            c: f64::NAN,
            r: f64::NAN,
            triggered: s.triggered,
            fired,
        })
    }

    fn heads(&self, h: &[f32]) -> Result<(f64, f64, f64), MonitorError> {
        self.monitor.check(h)?;
        let mon = self.monitor;
        let f = dot_f32(&mon.hazard.weights, h) + mon.hazard.offset;
        let c = dot_f32(&mon.support.weights, h) + mon.support.offset;
        let r = dot_f32(&mon.residual.weights, h) + self.prompt_term + mon.residual.offset;
        Ok((f, c, r))
    }

    /// Like [`push`](Self::push) but also reports the individual head outputs.
    /// `g` and `m` are the fused values, identical to what `push` produces.
    pub fn push_detailed(&mut self, h: &[f32]) -> Result<StepDetail, MonitorError> {
        let (f, c, r) = self.heads(h)?;
        let g = dot_f32(&self.monitor.combined, h) + self.g_offset;
        let mut detail = self.advance(g)?;
        detail.f = f;
        detail.c = c;
        detail.r = r;
        Ok(detail)
    }
}

/// Replay summary of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceScore {
    pub terminal_m: f64,
    pub max_m: f64,
    /// First 1-based step with `m_t >= tau` under the compiled threshold.
    pub trigger_step: Option<usize>,
    pub m: Vec<f64>,
}

impl TraceScore {
    /// First 1-based step with `m_t >= tau`.
    pub fn first_cross(&self, tau: f64) -> Option<usize> {
        self.m.iter().position(|&m| m >= tau).map(|i| i + 1)
    }

    /// `max(m_1..m_K)`, over the whole trace when it is shorter than `K`.
    pub fn max_within(&self, k: usize) -> f64 {
        self.m
            .iter()
            .take(k)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
