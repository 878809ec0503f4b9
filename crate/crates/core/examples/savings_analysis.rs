//! Communication savings of compressed updates for a large model, with the
//! break-even points and a sweep over the number of rounds.
//!
//! `cargo run --example savings_analysis`

use fedae::autoencoder::AeConfig;
use fedae::savings::{
    break_even_collaborators, break_even_rounds, decoder_cost, savings_ratio, sweep, DecoderCount,
    SavingsScenario, SweepAxis,
};

fn main() -> fedae::Result<()> {
    let (p, l) = (550_570u64, 320u64);
    let ae = AeConfig::new(l as usize).param_count(p)? as f64;
    let base = SavingsScenario::new(p as f64, l as f64, ae)?;

    let fleet = base.clone().with_rounds(40.0)?.with_collabs(1000.0)?;
    println!("autoencoder parameters: {ae}");
    println!(
        "40 rounds, 1000 collaborators, one decoder: SR = {:.2}",
        savings_ratio(&fleet)
    );
    println!("decoder cost: {}", decoder_cost(&fleet));

    let per = base.clone().with_decoders(DecoderCount::PerCollaborator)?;
    println!(
        "one decoder per collaborator: break-even after {:.1} rounds",
        break_even_rounds(&per)?
    );
    let eight = base.clone().with_rounds(8.0)?;
    println!(
        "8 rounds, one decoder: break-even at {:.1} collaborators",
        break_even_collaborators(&eight)?
    );

    println!("rounds,savings_ratio");
    for (r, sr) in sweep(
        &per.with_collabs(10.0)?,
        SweepAxis::Rounds,
        100.0,
        1000.0,
        10,
    )? {
        println!("{r},{sr:.3}");
    }
    Ok(())
}
