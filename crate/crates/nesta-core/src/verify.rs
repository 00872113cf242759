//! Randomized engine-versus-oracle verification.
//!
//! Each trial draws a random single-output convolution (kernel, channel
//! count, signedness, and operand widths sampled inside the sizing rule),
//! runs it through the engine batch by batch, and checks the running
//! partial value against the exact accumulation after every cycle, the
//! finalized sum against the convolution oracle at the end. Trials are
//! derived from a splittable seeded generator, so any counterexample is
//! replayable from (seed, trial index) alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{BatchSchedule, Engine, EngineConfig};
use crate::hwc::CelVariant;
use crate::oracle::{conv_layer, LayerShape, Tensor4};
use crate::par;
use crate::ppgen::{OperandPair, OperandWidth};
use crate::costmodel::valid_width_pairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: u64,
    pub width: OperandWidth,
    pub variant: CelVariant,
}

/// Result of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrialOutcome {
    Pass {
        batches: u64,
    },
    /// The per-cycle invariant broke: after `batch`, the engine's partial
    /// value disagreed with the exact running sum.
    PartialMismatch {
        batch: u64,
        expected: i64,
        got: i64,
    },
    /// The finalized sum disagreed with the convolution oracle.
    FinalMismatch {
        expected: i64,
        got: i64,
    },
    EngineFault(String),
}

impl TrialOutcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, TrialOutcome::Pass { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub trial: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub trials: u64,
    pub passed: u64,
    pub total_batches: u64,
    /// Lowest-index failing trial, independent of scheduling.
    pub counterexample: Option<Counterexample>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.counterexample.is_none() && self.passed == self.trials
    }
}

/// The two engines (signed and unsigned) a sweep runs against. Building
/// the compression networks once keeps the per-trial cost down.
pub struct VerifyEngines {
    signed: Engine,
    unsigned: Engine,
}

impl VerifyEngines {
    pub fn new(cfg: &VerifyConfig) -> Self {
        Self {
            signed: Engine::new(EngineConfig::new(cfg.width, cfg.variant, true)),
            unsigned: Engine::new(EngineConfig::new(cfg.width, cfg.variant, false)),
        }
    }
}

const KERNELS: [usize; 4] = [1, 3, 5, 11];
const MAX_CHANNELS: usize = 32;

/// Runs one trial. `fault` flips a state bit after the given batch index,
/// a hook used to demonstrate that broken engines produce counterexamples.
pub fn run_trial(
    cfg: &VerifyConfig,
    engines: &VerifyEngines,
    index: u64,
    fault: Option<u64>,
) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index.wrapping_add(1));

    let signed = rng.gen_bool(0.5);
    let kernel = KERNELS[rng.gen_range(0..KERNELS.len())];
    let channels = rng.gen_range(1..=MAX_CHANNELS);
    let engine = if signed { &engines.signed } else { &engines.unsigned };

    // Operand widths drawn from the maximal pairs the sizing rule admits
    // for this kernel/channel combination, occasionally narrowed further.
    let reg = cfg.width.accumulator_bits();
    let pairs_for = valid_width_pairs(reg, channels as u32, (kernel * kernel) as u32);
    let (mut w_bits, mut d_bits) = pairs_for[rng.gen_range(0..pairs_for.len())];
    if rng.gen_bool(0.3) {
        w_bits = rng.gen_range(1..=w_bits);
        d_bits = rng.gen_range(1..=d_bits);
    }

    let draw = |rng: &mut ChaCha8Rng, bits: u32| -> i64 {
        if signed {
            let half = 1i64 << (bits - 1);
            rng.gen_range(-half..half)
        } else {
            rng.gen_range(0..(1i64 << bits))
        }
    };

    let count = kernel * kernel * channels;
    let weights: Vec<i64> = (0..count).map(|_| draw(&mut rng, w_bits)).collect();
    let inputs: Vec<i64> = (0..count).map(|_| draw(&mut rng, d_bits)).collect();
    let bias = draw(&mut rng, w_bits.min(8));

    let pairs: Vec<OperandPair> = weights
        .iter()
        .zip(&inputs)
        .map(|(&w, &i)| OperandPair::new(w, i))
        .collect();
    let schedule = match BatchSchedule::build(kernel, channels, &pairs) {
        Ok(s) => s,
        Err(e) => return TrialOutcome::EngineFault(e.to_string()),
    };

    let mut state = match engine.reset(bias) {
        Ok(s) => s,
        Err(e) => return TrialOutcome::EngineFault(e.to_string()),
    };
    let mut exact = bias as i128;
    for (b, batch) in schedule.batches.iter().enumerate() {
        state = match engine.consume_batch(&state, batch) {
            Ok(s) => s,
            Err(e) => return TrialOutcome::EngineFault(e.to_string()),
        };
        if fault == Some(b as u64) {
            state = corrupt(state);
        }
        exact += crate::oracle::dot9(batch);
        let got = engine.partial_value(&state);
        if got as i128 != exact {
            return TrialOutcome::PartialMismatch {
                batch: b as u64,
                expected: exact as i64,
                got,
            };
        }
    }

    // Cross-check the finalized sum against the convolution oracle on the
    // equivalent one-output layer.
    let shape = LayerShape::new(1, 1, channels, kernel, kernel, 1).expect("trial shape is valid");
    let ifmap = Tensor4::from_vec(shape.ifmap_dims(), inputs).expect("sized by construction");
    let filters = Tensor4::from_vec(shape.filter_dims(), weights).expect("sized by construction");
    let expected = conv_layer(&ifmap, &filters, &[bias], &shape)
        .expect("oracle accepts trial shape")
        .get(0, 0, 0, 0);

    let fin = match engine.finalize(&state) {
        Ok(f) => f,
        Err(e) => return TrialOutcome::EngineFault(e.to_string()),
    };
    if fin.sum != expected {
        return TrialOutcome::FinalMismatch {
            expected,
            got: fin.sum,
        };
    }
    TrialOutcome::Pass {
        batches: schedule.batch_count(),
    }
}

fn corrupt(state: crate::engine::EngineState) -> crate::engine::EngineState {
    state.with_flipped_sum_bit()
}

/// Runs the whole sweep, trials in parallel, aggregation order-independent.
pub fn run(cfg: &VerifyConfig) -> VerifyReport {
    run_with_fault(cfg, None)
}

/// Sweep with an optional injected fault at (trial, batch).
pub fn run_with_fault(cfg: &VerifyConfig, fault: Option<(u64, u64)>) -> VerifyReport {
    let engines = VerifyEngines::new(cfg);
    let outcomes = par::map_indexed(cfg.trials as usize, |i| {
        let trial_fault = match fault {
            Some((t, b)) if t == i as u64 => Some(b),
            _ => None,
        };
        run_trial(cfg, &engines, i as u64, trial_fault)
    });

    let mut passed = 0;
    let mut total_batches = 0;
    let mut counterexample = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            TrialOutcome::Pass { batches } => {
                passed += 1;
                total_batches += batches;
            }
            other => {
                if counterexample.is_none() {
                    counterexample = Some(Counterexample {
                        trial: i as u64,
                        outcome: other,
                    });
                }
            }
        }
    }
    VerifyReport {
        trials: cfg.trials,
        passed,
        total_batches,
        counterexample,
    }
}
