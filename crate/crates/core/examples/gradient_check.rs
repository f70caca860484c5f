//! Compare the analytic gradient of the rendering loss with central finite
//! differences, in both precisions.
//!
//! `cargo run --release --example gradient_check`

use expanded_mpi::optim::{gradcheck, GradcheckConfig};
use expanded_mpi::real::Precision;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for precision in [Precision::F64, Precision::F32] {
        let config = GradcheckConfig { precision, ..GradcheckConfig::default() };
        let report = gradcheck(&config)?;
        let worst = report
            .probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .expect("probes");
        println!(
            "{precision:?}: {} probes, max relative error {:.2e} (tolerance {:.0e}) -> {}",
            report.probes.len(),
            report.max_rel_error,
            report.tolerance,
            if report.passed { "pass" } else { "FAIL" }
        );
        println!(
            "  worst probe: {:?} #{}: analytic {:.6e}, numeric {:.6e}",
            worst.kind, worst.index, worst.analytic, worst.numeric
        );
    }
    Ok(())
}
