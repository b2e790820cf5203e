//! The two-level sparse least squares solver on its own, checked against
//! the dense normal equations.

use curvestream::solvers::{dense_oracle_two_level, solve_two_level, stack_two_level, TwoLevelBlock, TwoLevelSparseProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> curvestream::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, q) = (4, 3);
    let groups = (0..200)
        .map(|_| {
            let n = rng.random_range(q + 1..=q + 6);
            let mut draw = |c: usize| DMatrix::from_fn(n, c, |_, _| rng.random::<f64>() - 0.5);
            TwoLevelBlock { b_mat: draw(p), b_dot: draw(q), b: draw(1).column(0).into_owned() }
        })
        .collect();
    let problem = TwoLevelSparseProblem { groups };
    let sol = solve_two_level(&problem)?;
    let (big, b, layout) = stack_two_level(&problem)?;
    let dense = dense_oracle_two_level(&big, &b, layout)?;
    println!("stacked system is {} x {}", big.nrows(), big.ncols());
    println!("x1 = {:?}", sol.x1.as_slice());
    let worst = sol
        .groups
        .iter()
        .zip(&dense.groups)
        .map(|(s, d)| (&s.a22 - &d.a22).amax().max((&s.x2 - &d.x2).amax()))
        .fold((&sol.x1 - &dense.x1).amax(), f64::max);
    println!("largest difference from the dense solution: {worst:.2e}");
    Ok(())
}
