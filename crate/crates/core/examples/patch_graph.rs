//! Builds the signed patch graph for noisy touching blobs, prints it as an
//! edge list and partitions it with both partitioners.

use patchseg::prelude::*;
use patchseg::selection::BundleForegrounds;

fn main() -> Result<()> {
    let params = ShapeParams {
        shape: vec![48, 48],
        instances: [4, 6],
        radius: [5.0, 8.0],
        min_gap: 0,
        ..Default::default()
    };
    let gt = make_shapes(ShapeKind::Blobs, &params, 7)?;
    let clean = synth(&gt, &PatchGeometry::new(&[7, 7])?)?;
    let bundle = corrupt(&clean, &NoiseSpec { flip_prob: 0.05, jitter_sigma: 0.0, seed: 7 })?;

    let fg = bundle.image_foreground();
    let discard = bundle.overlap_mask();
    let field = accumulate(&bundle, &fg, &discard, true)?;
    let ranked = rank(&field, &bundle, &fg, &discard);
    let foregrounds = BundleForegrounds { bundle: &bundle, restrict: field.restriction() };
    let selection = thin_out(&greedy_cover(&ranked, &foregrounds, &fg, &discard), &foregrounds, &fg, &discard);

    let graph = build_graph(&field, &bundle, &selection.pixels());
    let repulsive = graph.graph.edges.iter().filter(|e| e.weight < 0.0).count();
    println!("{} nodes, {} edges ({repulsive} repulsive)", graph.node_count(), graph.edge_count());
    for line in graph.graph.to_edge_list().lines().take(8) {
        println!("  {line}");
    }

    let cc = cc_positive(&graph.graph);
    let mws = mutex_watershed(&graph.graph);
    println!("ground truth instances:    {}", gt.len());
    println!("positive components:       {}", cc.component_count());
    println!("mutex watershed clusters:  {}", mws.component_count());
    Ok(())
}
