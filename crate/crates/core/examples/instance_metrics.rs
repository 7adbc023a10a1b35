//! Scores a prediction with one missed, one split and one exact instance
//! over the fine and coarse IoU grids.

use patchseg::prelude::*;

fn rect(grid: &Grid, r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> Mask {
    let w = grid.shape()[1];
    Mask::from_pixels(grid, r.flat_map(|y| c.clone().map(move |x| y * w + x)))
}

fn main() -> Result<()> {
    let grid = Grid::new(&[32, 32])?;
    let gt = vec![
        rect(&grid, 0..10, 0..10),
        rect(&grid, 12..22, 0..10),
        rect(&grid, 0..10, 20..30),
    ];
    let pred = vec![
        rect(&grid, 0..10, 0..10),
        rect(&grid, 12..22, 0..7),
        rect(&grid, 12..22, 7..10),
    ];
    for (name, grid) in [("fine", thresholds_fine()), ("coarse", thresholds_coarse())] {
        let report = evaluate(&pred, &gt, &grid)?;
        println!("{name} grid, avAP {:.4}", report.avap);
        print!("{}", report.to_tsv());
    }
    let row = ap_dsb(&pred, &gt, 0.5)?;
    println!("AP@0.5: tp {} fp {} fn {} -> {:.3}", row.tp, row.fp, row.fn_, row.ap);
    Ok(())
}
