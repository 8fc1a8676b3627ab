//! Adam-based optimization of the articulation state.
//!
//! Each step draws a fresh sample batch and a random subset of pixel
//! matches, evaluates the total objective with analytic gradients, and
//! applies a bias-corrected Adam update under an exponentially decaying
//! learning rate. Occupancy-consistency and collision terms are enabled only
//! after `gate_step` warm-up steps. Part 0's motion parameters are never
//! updated.
//!
//! Runs are bit-deterministic for a fixed seed: batches come from a seeded
//! generator and all parallel reductions merge in fixed chunk order. The
//! `deterministic` flag additionally forces single-threaded evaluation,
//! which is slower and produces the same numbers.

use crate::articulation::ArticulationState;
use crate::losses::{
    total_loss, LossBreakdown, LossWeights, MatchPair, ParamGrads, SampleBatch, ViewSet,
};
use crate::volume::{GridSpec, StateFields};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Optimization schedule and sampling budget.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OptimConfig {
    pub steps: usize,
    /// Initial learning rate; decays as `lr · decay^(step/steps)`.
    pub lr: f64,
    pub decay: f64,
    /// Step at which occupancy-consistency and collision terms switch on.
    pub gate_step: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Near-surface ray samples per direction per step.
    pub ray_samples: usize,
    /// Uniform samples per direction per step.
    pub uniform_samples: usize,
    /// Pixel matches per step (subsampled from the full match list).
    pub match_samples: usize,
    /// Segmentation logit grid resolution (cubed).
    pub seg_res: u32,
    /// Abort when the total loss exceeds this or turns non-finite.
    pub divergence_threshold: f64,
    /// Keep a full state snapshot every N steps (0 = never).
    pub checkpoint_every: usize,
    /// Force single-threaded evaluation.
    pub deterministic: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            steps: 2000,
            lr: 0.01,
            decay: 0.1,
            gate_step: 500,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ray_samples: 4096,
            uniform_samples: 8192,
            match_samples: 4096,
            seg_res: 50,
            divergence_threshold: 1e6,
            checkpoint_every: 0,
            deterministic: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidArgument("decay must be in (0, 1]".into()));
        }
        if self.gate_step >= self.steps {
            return Err(Error::InvalidArgument(
                "gate_step must be smaller than steps".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        self.lr * self.decay.powf(step as f64 / self.steps as f64)
    }
}

/// Frozen inputs of the articulation optimization.
#[derive(Debug, Clone)]
pub struct ProblemInputs {
    pub fields: [StateFields; 2],
    pub views: [ViewSet; 2],
    pub matches: Vec<MatchPair>,
    pub part_count: usize,
}

/// One logged step.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub breakdown: LossBreakdown,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub state: ArticulationState,
    pub trace: Vec<StepRecord>,
    pub checkpoints: Vec<(usize, ArticulationState)>,
}

/// Evaluates the total loss and its gradient for every free parameter.
///
/// Thin wrapper around the loss engine that also classifies non-finite
/// results by offending term.
pub fn grad(
    art: &ArticulationState,
    inputs: &ProblemInputs,
    weights: &LossWeights,
    batch: &SampleBatch,
    matches: &[MatchPair],
    enable_gated_terms: bool,
) -> Result<(LossBreakdown, ParamGrads)> {
    let decoded = art.decode_motions();
    let mut grads = ParamGrads::zeros(art);
    let views = [&inputs.views[0], &inputs.views[1]];
    let breakdown = total_loss(
        art,
        &decoded,
        &inputs.fields,
        &views,
        matches,
        batch,
        weights,
        enable_gated_terms,
        Some(&mut grads),
    )?;
    check_finite(&breakdown, 0, f64::INFINITY)?;
    Ok((breakdown, grads))
}

fn check_finite(b: &LossBreakdown, step: usize, threshold: f64) -> Result<()> {
    let terms = [
        ("consistency", b.consistency),
        ("matching", b.matching),
        ("collision", b.collision),
        ("total", b.total),
    ];
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("{name} loss is non-finite"),
            });
        }
    }
    if b.total > threshold {
        return Err(Error::Diverged {
            step,
            message: format!("total loss {} exceeds threshold {threshold}", b.total),
        });
    }
    Ok(())
}

/// First and second Adam moments for every free parameter.
struct AdamState {
    m_seg: [Vec<f64>; 2],
    v_seg: [Vec<f64>; 2],
    m_motion: Vec<[f64; 9]>,
    v_motion: Vec<[f64; 9]>,
    t: usize,
}

impl AdamState {
    fn new(art: &ArticulationState) -> Self {
        AdamState {
            m_seg: [
                vec![0.0; art.seg[0].logits.len()],
                vec![0.0; art.seg[1].logits.len()],
            ],
            v_seg: [
                vec![0.0; art.seg[0].logits.len()],
                vec![0.0; art.seg[1].logits.len()],
            ],
            m_motion: vec![[0.0; 9]; art.part_count()],
            v_motion: vec![[0.0; 9]; art.part_count()],
            t: 0,
        }
    }

    fn update(
        &mut self,
        art: &mut ArticulationState,
        grads: &ParamGrads,
        motion_grads: &[([f64; 6], nalgebra::Vector3<f64>)],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for state in 0..2 {
            let logits = &mut art.seg[state].logits;
            let m = &mut self.m_seg[state];
            let v = &mut self.v_seg[state];
            let g = &grads.seg[state];
            for i in 0..logits.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                logits[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
        // Part 0 is pinned: never updated.
        for part in 1..art.part_count() {
            let (g6, gt) = &motion_grads[part];
            let mut g9 = [0.0; 9];
            g9[..6].copy_from_slice(g6);
            g9[6] = gt.x;
            g9[7] = gt.y;
            g9[8] = gt.z;
            let m = &mut self.m_motion[part];
            let v = &mut self.v_motion[part];
            for k in 0..9 {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g9[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g9[k] * g9[k];
                let step = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                if k < 6 {
                    art.motions[part].rot6d[k] -= step;
                } else {
                    art.motions[part].trans[k - 6] -= step;
                }
            }
        }
    }
}

/// Runs the full optimization from a seeded random initialization.
pub fn run(inputs: &ProblemInputs, weights: &LossWeights, config: &OptimConfig) -> Result<OptimOutcome> {
    config.validate()?;
    weights.validate()?;
    if config.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(inputs, weights, config))
    } else {
        run_inner(inputs, weights, config)
    }
}

fn run_inner(
    inputs: &ProblemInputs,
    weights: &LossWeights,
    config: &OptimConfig,
) -> Result<OptimOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) + 1);
    let seg_spec = GridSpec::unit_workspace(config.seg_res);
    let mut art = ArticulationState::init(inputs.part_count, seg_spec, &mut rng);
    let mut adam = AdamState::new(&art);
    let mut trace = Vec::with_capacity(config.steps);
    let mut checkpoints = Vec::new();
    let views = [&inputs.views[0], &inputs.views[1]];

    let mut match_buf: Vec<MatchPair> = Vec::new();
    for step in 0..config.steps {
        let batch = SampleBatch::draw(
            &inputs.fields,
            &views,
            config.ray_samples,
            config.uniform_samples,
            weights.surf_band,
            &mut rng,
        );
        let step_matches: &[MatchPair] = if inputs.matches.len() <= config.match_samples {
            &inputs.matches
        } else {
            match_buf.clear();
            let picks =
                rand::seq::index::sample(&mut rng, inputs.matches.len(), config.match_samples);
            match_buf.extend(picks.iter().map(|i| inputs.matches[i]));
            &match_buf
        };
        let enable_gated = step >= config.gate_step;

        let decoded = art.decode_motions();
        let mut grads = ParamGrads::zeros(&art);
        let breakdown = total_loss(
            &art,
            &decoded,
            &inputs.fields,
            &views,
            step_matches,
            &batch,
            weights,
            enable_gated,
            Some(&mut grads),
        )?;
        check_finite(&breakdown, step, config.divergence_threshold)?;

        let lr = config.learning_rate_at(step);
        let motion_grads = grads.motion_param_grads(&decoded);
        adam.update(
            &mut art,
            &grads,
            &motion_grads,
            lr,
            config.beta1,
            config.beta2,
            config.eps,
        );

        trace.push(StepRecord {
            step,
            lr,
            breakdown,
        });
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            checkpoints.push((step, art.clone()));
        }
    }

    Ok(OptimOutcome {
        state: art,
        trace,
        checkpoints,
    })
}
