//! Correlation coefficients, the logistic mapping and grouped evaluation on
//! a toy prediction set.

use sriqa::metrics::{krcc, plcc, srcc, Logistic4};

fn main() -> sriqa::Result<()> {
    let truth = [0.91, 0.83, 0.74, 0.70, 0.55, 0.52, 0.41, 0.30];
    let pred = [3.2, 3.1, 2.4, 2.4, 1.1, 1.3, 0.2, -0.6];
    println!("PLCC {:.4}", plcc(&pred, &truth)?);
    println!("SRCC {:.4}", srcc(&pred, &truth)?);
    println!("KRCC {:.4} (tau-b, one tie in predictions)", krcc(&pred, &truth)?);

    let fit = Logistic4::fit(&pred, &truth)?;
    let mapped: Vec<f64> = pred.iter().map(|&p| fit.eval(p)).collect();
    println!("PLCC after logistic mapping {:.4}", plcc(&mapped, &truth)?);
    println!("SRCC is unchanged: {:.4}", srcc(&mapped, &truth)?);
    Ok(())
}
