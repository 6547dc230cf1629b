//! On-disk container for reduced models: versioned JSON with full-precision
//! floats, so a reloaded model reproduces reduced solves bit-identically.

use super::ReducedModel;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

const FORMAT: &str = "lrbms-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    model: ReducedModel,
}

pub fn save_model(path: &Path, model: &ReducedModel) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    let container =
        Container { format: FORMAT.into(), version: VERSION, model: model.clone() };
    serde_json::to_writer(&mut writer, &container)
        .map_err(|e| Error::Format(format!("cannot encode model: {e}")))?;
    writer.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ReducedModel> {
    let file = File::open(path)?;
    let container: Container = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format(format!("cannot decode model {}: {e}", path.display())))?;
    if container.format != FORMAT {
        return Err(Error::Format(format!(
            "not a reduced-model container: format tag {:?}",
            container.format
        )));
    }
    if container.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {} (expected {VERSION})",
            container.version
        )));
    }
    Ok(container.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DgField;
    use crate::mesh::{BoundarySpec, FineGrid};
    use crate::mobility::MobilityBasis;
    use crate::rom::{BuildHistory, ReducedBasis};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn model_roundtrip_is_bit_identical() {
        let grid = FineGrid::new(1.0, 1.0, 2, 1, BoundarySpec::all_no_flow()).unwrap();
        let w = DgField::constant(&grid, 1, 0.1234567890123456789);
        let n = DgField::constant(&grid, 1, 98.7654321e-7);
        let model = ReducedModel {
            checksum: 0xdeadbeef,
            coarse_nx: 2,
            coarse_ny: 1,
            degree: 1,
            basis: ReducedBasis {
                degree: 1,
                per_cell: vec![vec![vec![0.5f64.sqrt(), 0.0, 0.0]], vec![]],
            },
            b_q: vec![DMatrix::from_row_slice(1, 1, &[std::f64::consts::PI])],
            c: DMatrix::from_row_slice(1, 1, &[1.0 / 3.0]),
            d_q: vec![DVector::from_vec(vec![2.0f64.sqrt()])],
            e: DVector::from_vec(vec![1e-300]),
            mobility: MobilityBasis::from_profiles(&grid, vec![w], vec![n]),
            history: BuildHistory {
                snapshot_indices: vec![3, 1, 4],
                max_errors: vec![1.0, 0.1, 0.01],
                sizes_greedy: vec![1, 0],
                sizes_pca: None,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.checksum, model.checksum);
        assert_eq!(loaded.basis.per_cell, model.basis.per_cell);
        assert_eq!(loaded.b_q[0][(0, 0)].to_bits(), model.b_q[0][(0, 0)].to_bits());
        assert_eq!(loaded.c[(0, 0)].to_bits(), model.c[(0, 0)].to_bits());
        assert_eq!(loaded.e[0].to_bits(), model.e[0].to_bits());
        assert_eq!(
            loaded.mobility.total[0].coeffs()[0].to_bits(),
            model.mobility.total[0].coeffs()[0].to_bits()
        );

        // saving the reload byte-identically reproduces the file
        let path2 = dir.path().join("model2.json");
        save_model(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.json");
        std::fs::write(&path, b"{\"format\": \"something-else\"}").unwrap();
        assert!(load_model(&path).is_err());
    }
}
