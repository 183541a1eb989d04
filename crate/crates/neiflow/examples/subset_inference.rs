//! Envelope inference on hand-made data, no simulator involved: five
//! candidate response curves, an observation near two of them, and the
//! subset expectations whose loss stays under the threshold.

use neiflow::nei::{
    posterior_envelope, prior_envelope, select_posterior, Observation, ResponseEnsemble,
    SelectOpts,
};

fn main() -> neiflow::Result<()> {
    // One well, six steps, five members. Members 1 and 2 straddle the
    // observation; member 4 is far off.
    let rows = vec![
        vec![10.0, 9.0, 8.2, 7.6, 7.1, 6.8],
        vec![9.0, 8.1, 7.4, 6.9, 6.5, 6.2],
        vec![8.0, 7.3, 6.7, 6.2, 5.9, 5.6],
        vec![7.0, 6.4, 5.9, 5.5, 5.2, 5.0],
        vec![14.0, 12.5, 11.4, 10.6, 10.0, 9.5],
    ];
    let responses = ResponseEnsemble::new(1, 6, rows)?;

    let d_obs = vec![8.5, 7.7, 7.05, 6.55, 6.2, 5.9];
    let noise = vec![0.2; 6];
    let obs = Observation::new(d_obs, noise, 2.0)?;

    let prior = prior_envelope(&responses, 3)?;
    println!(
        "prior envelope at step 0: [{:.2}, {:.2}]",
        prior.lower[0], prior.upper[0]
    );

    let selection = select_posterior(&responses, &obs, 1.0, 3, SelectOpts::default())?;
    println!(
        "sigma {:.1}: {} of the C(5,1)+C(5,2)+C(5,3) = 25 subsets selected",
        selection.sigma,
        selection.len()
    );
    for entry in selection.entries.iter().take(8) {
        println!(
            "  members {:?}  loss {:.4}",
            entry.subset.members(),
            entry.loss
        );
    }
    println!("union of selected subsets: {:?}", selection.union());

    let posterior = posterior_envelope(&responses, &selection)?;
    for step in 0..6 {
        println!(
            "step {step}: posterior [{:.3}, {:.3}]  observed {:.3}",
            posterior.lower[step],
            posterior.upper[step],
            obs.d_obs()[step]
        );
    }
    Ok(())
}
