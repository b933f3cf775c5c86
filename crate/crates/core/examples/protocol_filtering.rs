//! Show which gallery entries each evaluation protocol admits for a query,
//! and how the score of a fixed baseline changes between them.

use conf_rerank::data::Split;
use conf_rerank::eval::{evaluate, filter_gallery, Baseline, Protocol, Scorer};
use conf_rerank::ranking::Hyperparams;
use conf_rerank::synthetic::{generate, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let ds = generate(&SyntheticConfig::default())?;
    let records = &ds.manifest.records;
    let gallery: Vec<_> = ds.manifest.indices(Split::Gallery).into_iter().map(|g| &records[g]).collect();
    let query = &records[ds.manifest.indices(Split::Query)[0]];

    println!("query {} (person {}, clothes {})", query.seq_id, query.person_id, query.clothes_id);
    let standard = filter_gallery(query, &gallery, Protocol::Standard);
    let cc = filter_gallery(query, &gallery, Protocol::Cc);
    println!("standard admits {} of {} gallery entries", standard.len(), gallery.len());
    println!("cc admits {}; removed:", cc.len());
    for i in standard.iter().filter(|i| !cc.contains(i)) {
        println!("  {} (person {}, clothes {})", gallery[*i].seq_id, gallery[*i].person_id, gallery[*i].clothes_id);
    }
    let same_person: Vec<_> = cc.iter().map(|&i| gallery[i]).filter(|g| g.person_id == query.person_id).collect();
    println!("cc keeps {} true matches, all in other clothes", same_person.len());

    let hp = Hyperparams::default();
    println!("\n{:<8} {:>10} {:>10}", "baseline", "standard", "cc");
    for (name, b) in [("app", Baseline::App), ("gait", Baseline::Gait), ("sum", Baseline::Sum)] {
        let s = evaluate(&ds, Scorer::Fixed(b), Protocol::Standard, &hp)?;
        let c = evaluate(&ds, Scorer::Fixed(b), Protocol::Cc, &hp)?;
        println!("{name:<8} {:>10.2} {:>10.2}", 100.0 * s.map, 100.0 * c.map);
    }
    Ok(())
}
