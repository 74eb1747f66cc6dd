use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use voxstokes::{StokesSpectrum, VectorField};

use crate::config::InitialData;
use crate::error::CliError;

/// Stream of the seeded generator reserved for initial data, so that it never
/// overlaps the draws of the `‖Φ‖` estimate.
const INITIAL_STREAM: u64 = 1;

/// Modal coefficients of the initial datum, plus how far the projection onto
/// divergence-free fields moved it (zero except for file input).
pub fn initial_modal(
    spec: &StokesSpectrum,
    data: &InitialData,
    seed: u64,
) -> Result<(DVector<f64>, f64), CliError> {
    let dim = spec.dim();
    match data {
        InitialData::Zero => Ok((DVector::zeros(dim), 0.0)),
        InitialData::Mode { index, amplitude } => {
            if *index >= dim {
                return Err(CliError::InitialData(format!(
                    "mode index {index} out of range, the domain has {dim} modes"
                )));
            }
            let mut a = DVector::zeros(dim);
            a[*index] = *amplitude;
            Ok((a, 0.0))
        }
        InitialData::Random { amplitude, decay } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(INITIAL_STREAM);
            let raw = DVector::from_fn(dim, |k, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * spec.eigenvalues()[k].powf(-decay)
            });
            let norm = raw.norm();
            Ok((if norm > 0.0 { raw * (amplitude / norm) } else { raw }, 0.0))
        }
        InitialData::File { path } => {
            let field = read_field(spec, path)?;
            let a = spec.modal(&field)?;
            let moved = spec.lift(&a)?.sub(&field)?.norm();
            Ok((a, moved))
        }
    }
}

fn read_field(spec: &StokesSpectrum, path: &Path) -> Result<VectorField, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::InitialData(format!("cannot read {}: {e}", path.display())))?;
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CliError::InitialData(format!("bad number {t:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mask = spec.hodge().operators().mask().clone();
    let want = 3 * mask.occupied_count();
    if values.len() != want {
        return Err(CliError::InitialData(format!("expected {want} values, found {}", values.len())));
    }
    Ok(VectorField::new(mask, DVector::from_vec(values))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use voxstokes::{assemble_stokes, build_hodge, build_operators, DomainMask};

    fn spec() -> StokesSpectrum {
        let mask = DomainMask::full([3, 2, 2], 1.0).unwrap();
        let ops = Arc::new(build_operators(Arc::new(mask)));
        assemble_stokes(Arc::new(build_hodge(ops).unwrap()), 0.0).unwrap()
    }

    #[test]
    fn amplitude_is_the_field_norm() {
        let s = spec();
        for data in [
            InitialData::Mode { index: 1, amplitude: 2.5 },
            InitialData::Random { amplitude: 2.5, decay: 0.5 },
        ] {
            let (a, _) = initial_modal(&s, &data, 9).unwrap();
            assert!((s.lift(&a).unwrap().norm() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn random_data_depends_only_on_seed() {
        let s = spec();
        let data = InitialData::Random { amplitude: 1.0, decay: 0.25 };
        assert_eq!(initial_modal(&s, &data, 3).unwrap(), initial_modal(&s, &data, 3).unwrap());
        assert_ne!(initial_modal(&s, &data, 3).unwrap().0, initial_modal(&s, &data, 4).unwrap().0);
    }

    #[test]
    fn mode_index_is_checked() {
        let s = spec();
        let data = InitialData::Mode { index: s.dim(), amplitude: 1.0 };
        assert!(matches!(initial_modal(&s, &data, 0), Err(CliError::InitialData(_))));
    }

    #[test]
    fn file_input_is_projected() {
        let s = spec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.txt");
        let n = 3 * s.hodge().operators().mask().occupied_count();
        let text: Vec<String> = (0..n).map(|i| format!("{}", (i as f64).cos())).collect();
        std::fs::write(&path, text.join("\n")).unwrap();
        let (a, moved) = initial_modal(&s, &InitialData::File { path: path.clone() }, 0).unwrap();
        assert_eq!(a.len(), s.dim());
        assert!(moved > 0.0);
        std::fs::write(&path, "1 2 3").unwrap();
        assert!(initial_modal(&s, &InitialData::File { path }, 0).is_err());
    }
}
