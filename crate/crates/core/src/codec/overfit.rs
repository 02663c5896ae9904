use super::{encode, predict_edge_types, reconstruction_loss, AtomTypeAutoencoder, CodecError, EdgeTypeModel, GraphAutoencoder};
use crate::chem::MolGraph;
use crate::diffcore::{Adam, Tape};

/// Result of fitting the full autoencoding stack to a single molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct OverfitOutcome {
    /// Number of Adam steps after which decoding first reproduced the
    /// molecule exactly, if it did.
    pub steps: Option<usize>,
    pub final_loss: f64,
}

/// Whether `m` survives encode, decode and bond typing unchanged.
pub fn reconstructs_exactly(ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, etm: &EdgeTypeModel, m: &MolGraph) -> Result<bool, CodecError> {
    let g = ae.decode(at, &encode(ae, at, m)?)?;
    if g.atoms != m.atoms() {
        return Ok(false);
    }
    let typed = predict_edge_types(etm, &g)?;
    Ok(typed.dropped.is_empty() && typed.graph == *m)
}

/// Trains all three models on `m` alone, stopping as soon as the
/// reconstruction is exact.
pub fn overfit_one(
    ae: &mut GraphAutoencoder,
    at: &mut AtomTypeAutoencoder,
    etm: &mut EdgeTypeModel,
    m: &MolGraph,
    lr: f64,
    max_steps: usize,
) -> Result<OverfitOutcome, CodecError> {
    let mut opt_ae = Adam::new(&ae.store, lr);
    let mut opt_at = Adam::new(&at.store, lr);
    let mut opt_etm = Adam::new(&etm.store, lr);
    let mut final_loss = f64::NAN;
    for step in 1..=max_steps {
        let mut tape = Tape::new();
        let mut loss = reconstruction_loss(&mut tape, ae, at, m)?.loss;
        if let Some(l) = etm.loss(&mut tape, m)? {
            loss = tape.add(loss, l)?;
        }
        final_loss = tape.value(loss).item();
        let g = tape.backward(loss)?;
        opt_ae.apply(&mut ae.store, &g)?;
        opt_at.apply(&mut at.store, &g)?;
        opt_etm.apply(&mut etm.store, &g)?;
        if reconstructs_exactly(ae, at, etm, m)? {
            return Ok(OverfitOutcome {
                steps: Some(step),
                final_loss,
            });
        }
    }
    Ok(OverfitOutcome { steps: None, final_loss })
}
