//! dB-magnitude image export: 8-bit binary PGM plus CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::imaging::{image_to_db, ComplexImage, ImagingError};
use crate::io::config::SliceSelector;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{0}D images need a slice selector")]
    NeedsSlice(usize),
    #[error("floor must be finite and < 0 dB, got {0}")]
    BadFloor(f64),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ExportError> = std::result::Result<T, E>;

/// Maps `[floor_db, 0]` onto `[0, 255]`, rounding half up.
pub fn db_to_pixel(db: f64, floor_db: f64) -> u8 {
    let t = ((db - floor_db) / -floor_db).clamp(0.0, 1.0);
    (t * 255.0 + 0.5).floor() as u8
}

/// 1D or 2D view of an image; 3D images require `slice`.
pub fn planar_view(image: &ComplexImage, slice: Option<SliceSelector>) -> Result<ComplexImage> {
    match (image.grid.dimensionality(), slice) {
        (1 | 2, _) => Ok(image.clone()),
        (3, Some(SliceSelector::MaxProjection)) => Ok(image.max_over_height()?),
        (3, Some(SliceSelector::Height(o))) => Ok(image.height_slice(o)?),
        (d, _) => Err(ExportError::NeedsSlice(d)),
    }
}

/// Binary PGM (`P5`) bytes: one row per range cell, one column per azimuth cell.
pub fn pgm_bytes(image: &ComplexImage, floor_db: f64) -> Result<Vec<u8>> {
    if !(floor_db.is_finite() && floor_db < 0.0) {
        return Err(ExportError::BadFloor(floor_db));
    }
    let (rows, cols) = rows_cols(image)?;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(
        image_to_db(image, floor_db)
            .iter()
            .map(|&d| db_to_pixel(d, floor_db)),
    );
    Ok(out)
}

/// dB values as CSV, one line per range cell.
pub fn csv_text(image: &ComplexImage, floor_db: f64) -> Result<String> {
    let (_, cols) = rows_cols(image)?;
    let db = image_to_db(image, floor_db);
    let mut s = String::with_capacity(db.len() * 10);
    for row in db.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.4}");
        }
        s.push('\n');
    }
    Ok(s)
}

fn rows_cols(image: &ComplexImage) -> Result<(usize, usize)> {
    match image.shape().as_slice() {
        [n] => Ok((1, *n)),
        [n, m] => Ok((*n, *m)),
        other => Err(ExportError::NeedsSlice(other.len())),
    }
}

/// Writes `<stem>.pgm` and `<stem>.csv` next to each other.
pub fn export_db_image(
    image: &ComplexImage,
    floor_db: f64,
    slice: Option<SliceSelector>,
    stem: &Path,
) -> Result<()> {
    let view = planar_view(image, slice)?;
    let write = |ext: &str, bytes: &[u8]| {
        let path = stem.with_extension(ext);
        fs::write(&path, bytes).map_err(|source| ExportError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write("pgm", &pgm_bytes(&view, floor_db)?)?;
    write("csv", csv_text(&view, floor_db)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{GridAxis, ImageGrid};
    use crate::Complex;

    #[test]
    fn pixel_mapping_examples() {
        assert_eq!(db_to_pixel(0.0, -60.0), 255);
        assert_eq!(db_to_pixel(-60.0, -60.0), 0);
        assert_eq!(db_to_pixel(-30.0, -60.0), 128);
        assert_eq!(db_to_pixel(-90.0, -60.0), 0);
    }

    #[test]
    fn pgm_layout() {
        let grid = ImageGrid::two_d(GridAxis::new(1.0, 0.1, 2), GridAxis::new(0.0, 0.1, 3));
        let values = vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 10f64.powf(-1.5)),
            Complex::new(0.0, 0.0),
            Complex::new(0.5, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ];
        let img = ComplexImage::new(grid, values).unwrap();
        let bytes = pgm_bytes(&img, -60.0).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 3], &[255, 128, 0]);
        let csv = csv_text(&img, -60.0).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("0.0000,-30.0000,-60.0000"));
    }

    #[test]
    fn volumes_need_a_slice() {
        let grid = ImageGrid::three_d(
            GridAxis::new(1.0, 0.1, 2),
            GridAxis::new(0.0, 0.1, 2),
            GridAxis::new(0.0, 0.1, 2),
        );
        let img = ComplexImage::zeros(grid);
        assert!(matches!(
            planar_view(&img, None),
            Err(ExportError::NeedsSlice(3))
        ));
        assert_eq!(
            planar_view(&img, Some(SliceSelector::Height(1)))
                .unwrap()
                .shape(),
            vec![2, 2]
        );
        let dir = tempfile::tempdir().unwrap();
        export_db_image(
            &img,
            -40.0,
            Some(SliceSelector::MaxProjection),
            &dir.path().join("v"),
        )
        .unwrap();
        assert!(dir.path().join("v.pgm").exists() && dir.path().join("v.csv").exists());
    }
}
