//! Bit-exact functional model and analysis toolkit for NESTA-style
//! convolution engines.
//!
//! The engine computes fixed-point convolutions without multipliers or
//! adders: nine weight/input pairs per cycle are reshaped into bit-aligned
//! partial products and crushed through layers of hamming-weight
//! compressors together with the previous cycle's accumulator and carry
//! bits. Carries never propagate spatially during accumulation: they are
//! banked in registers and consumed one significance higher on the next
//! cycle. Each cycle therefore runs only the first adder level, and a full
//! addition at the very end (one extra cycle) produces the exact sum.
//!
//! What lives where:
//!
//! * [`bits`]: bit columns and matrices, the conserved currency.
//! * [`hwc`]: compressor algebra and compression-network construction.
//! * [`ppgen`]: partial-product reshaping and sign handling.
//! * [`engine`]: the cycle-stepped state machine and batch scheduling.
//! * [`oracle`]: exact integer references everything is tested against.
//! * [`dataflow`]: seven-loop schedules, NLR/WS/IS/OS/RS, engine-backed
//!   convolution, global-buffer transaction counts.
//! * [`costmodel`]: cycle/runtime/energy arithmetic, crossover analysis,
//!   the accumulator sizing rule, PPA parameter tables.
//! * [`netspec`]: network descriptions, bundled AlexNet/VGG-19, per-layer
//!   analysis records.
//! * [`verify`]: seeded random engine-versus-oracle sweeps.
//!
//! Data-parallel paths (verification sweeps, engine-backed convolutions,
//! per-layer analysis) run on rayon; building with
//! `--no-default-features` swaps in sequential loops with identical
//! results.
//!
//! ```
//! use nesta_core::engine::{BatchSchedule, Engine, EngineConfig};
//! use nesta_core::hwc::CelVariant;
//! use nesta_core::ppgen::{OperandPair, OperandWidth};
//!
//! let engine = Engine::new(EngineConfig::new(OperandWidth::W8, CelVariant::Standard, true));
//! let pairs = vec![OperandPair::new(1, 1); 9];
//! let schedule = BatchSchedule::build(3, 1, &pairs).unwrap();
//! let run = engine.run(0, &schedule).unwrap();
//! assert_eq!(run.sum, 9);
//! assert_eq!(run.cycles, 2); // one batch plus the final addition
//! ```

pub mod bits;
pub mod costmodel;
pub mod dataflow;
pub mod engine;
pub mod hwc;
pub mod netspec;
pub mod oracle;
mod par;
pub mod ppgen;
pub mod verify;
