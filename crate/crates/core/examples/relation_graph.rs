//! Build the cross-modal relation graphs for a handful of points and print
//! their wiring: each branch's graph takes its neighbors from the other
//! modality.

use conf_rerank::graph::build_relation_graphs;
use conf_rerank::Matrix;

fn main() -> anyhow::Result<()> {
    // two appearance clusters; gait splits the points differently
    let app = Matrix::from_rows(&[
        [1.0, 0.0],
        [0.9, 0.1],
        [0.95, 0.05],
        [0.0, 1.0],
        [0.1, 0.9],
    ])?;
    let gait = Matrix::from_rows(&[
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.9, 0.1],
        [0.9, 0.0, 0.1],
        [0.0, 0.1, 0.9],
    ])?;
    let graphs = build_relation_graphs(&app, &gait, 2)?;

    for (name, g) in [("appearance graph (gait neighbors)", &graphs.app), ("gait graph (appearance neighbors)", &graphs.gait)] {
        println!("{name}: {} nodes, {} edges", g.num_nodes(), g.num_edges());
        for k in 0..g.num_nodes() {
            println!("  node {k} <- {:?}", g.incoming[k]);
        }
        let j = g.incoming[1][1];
        let f = g.edge_feature(j, 1).expect("edge exists");
        println!("  feature of edge {j} -> 1: {f:.3?}\n");
    }
    println!("{}", serde_json::to_string_pretty(&graphs.gait.to_json(None))?);
    Ok(())
}
