//! Rank the gallery for one query with each branch and show how the
//! candidate set mixes the two lists.

use conf_rerank::data::Split;
use conf_rerank::eval::{filter_gallery, Protocol};
use conf_rerank::pipeline::{retrieve, UnitFeatures};
use conf_rerank::ranking::Hyperparams;
use conf_rerank::synthetic::{generate, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let ds = generate(&SyntheticConfig::default())?;
    let unit = UnitFeatures::new(&ds.features)?;
    let records = &ds.manifest.records;
    let gallery = ds.manifest.indices(Split::Gallery);
    let gallery_records: Vec<_> = gallery.iter().map(|&g| &records[g]).collect();

    let q = ds.manifest.indices(Split::Query)[0];
    let admissible: Vec<usize> = filter_gallery(&records[q], &gallery_records, Protocol::Cc)
        .into_iter()
        .map(|i| gallery[i])
        .collect();
    let hp = Hyperparams {
        k: 20,
        ..Hyperparams::default()
    };
    let r = retrieve(&ds.manifest, &unit, q, admissible, &hp, false)?;

    let query = &records[q];
    println!("query {} (person {}, clothes {})", query.seq_id, query.person_id, query.clothes_id);
    println!("\n rank  appearance                     gait");
    for rank in 0..10 {
        let show = |pos: usize, d: f64| {
            let g = &records[r.gallery[pos]];
            let mark = if g.person_id == query.person_id { '*' } else { ' ' };
            format!("{mark} {:<18} {d:.3}", g.seq_id)
        };
        let (a, b) = (r.r_app.indices[rank], r.r_gait.indices[rank]);
        println!(
            " {:>4}  {}  {}",
            rank + 1,
            show(a, r.r_app.distances[a]),
            show(b, r.r_gait.distances[b])
        );
    }

    let head = (hp.gamma * hp.k as f64).round() as usize;
    println!("\ncandidates (K = {}, {head} from appearance, rest from gait):", hp.k);
    let c = &r.candidates;
    for (i, &pos) in c.indices.iter().enumerate() {
        println!(
            " {:>3}  {:<18} s_app {:.3}  s_gait {:.3}  {}",
            i + 1,
            records[r.gallery[pos]].seq_id,
            c.s_app[i],
            c.s_gait[i],
            if c.labels[i] { "match" } else { "" }
        );
    }
    Ok(())
}
