//! The cost tables and what the one-sided loss does with them.

use gradeconf::losses::{cross_entropy_loss, sosr_gradient, sosr_loss, CostMatrix, CostMatrixKind};

fn main() -> gradeconf::Result<()> {
    for kind in [CostMatrixKind::Custom, CostMatrixKind::Linear] {
        let cm = CostMatrix::builtin(kind, 4)?;
        println!("{kind:?} cost table:");
        for row in cm.entries() {
            println!("  {row:?}");
        }
    }

    let cm = CostMatrix::builtin(CostMatrixKind::Custom, 4)?;
    let candidates: [(&str, [f64; 4]); 4] = [
        ("on the cost row", [0.0, 0.1, 0.7, 1.0]),
        ("confident, correct", [-1.0, 1.1, 1.7, 2.0]),
        ("hesitates 0 vs 1", [0.0, 0.0, 1.0, 1.0]),
        ("confident, wrong", [1.0, 0.7, 0.3, -1.0]),
    ];
    println!("\ntrue grade 0:");
    for (name, risk) in candidates {
        let loss = sosr_loss(&risk, 0, &cm)?;
        let grad = sosr_gradient(&risk, 0, &cm)?;
        let (ce, _) = cross_entropy_loss(&risk.map(|r| -r), 0)?;
        println!("  {name:<20} sosr {loss:.4}  grad {grad:.3?}  cross-entropy on -risk {ce:.4}");
    }
    Ok(())
}
