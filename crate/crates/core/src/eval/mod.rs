//! Downstream harnesses: linear probes on latents, FGSM attacks with
//! reconstruction-based refinement, and reconstruction-error anomaly scoring.

mod anomaly;
mod attack;
mod probe;

pub use anomaly::{anomaly_scores, eer, roc_auc};
pub use attack::{
    accuracy, add_noise, defend_refine, fgsm_attack, train_classifier, train_substitute, AttackMode, ClassifierConfig,
    NoiseConfig,
};
pub use probe::{train_probe, LinearProbe, ProbeConfig};
