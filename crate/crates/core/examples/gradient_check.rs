//! Compares analytic and finite-difference gradients of the full training
//! objective on a small random model.
//!
//! cargo run --release --example gradient_check
use cite::network::{AssignmentMode, ModelConfig};
use cite::training::check_model_gradients;

fn main() -> cite::Result<()> {
    for mode in [AssignmentMode::Learned, AssignmentMode::External] {
        let cfg = ModelConfig::new(16, 16, 8, 3, mode, 7);
        let r = check_model_gradients(&cfg, 4, 6, 1e-3, 7)?;
        println!(
            "{mode:?}: {} coordinates, max rel error {:.2e} ({}[{}]), {} skipped at kinks",
            r.checked, r.max_rel_error, r.worst_tensor, r.worst_index, r.skipped
        );
    }
    Ok(())
}
