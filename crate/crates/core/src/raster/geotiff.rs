//! Minimal single-band float GeoTIFF support.
//!
//! Georeferencing is read from either `ModelPixelScale` + `ModelTiepoint` or a
//! rotation-free `ModelTransformation`. The CRS tag is `EPSG:<code>` from the
//! projected (or geographic) CRS geokey, falling back to the citation string.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype::Gray64Float, TiffEncoder};
use tiff::tags::Tag;

use super::{RasterError, RasterGrid, RasterKind};

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_CITATION: u16 = 1026;
const KEY_GEOGRAPHIC_CRS: u16 = 2048;
const KEY_PROJECTED_CRS: u16 = 3072;
const RASTER_PIXEL_IS_POINT: u16 = 2;

fn tiff_err(path: &Path) -> impl Fn(tiff::TiffError) -> RasterError + '_ {
    move |e| RasterError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_geotiff(path: &Path, kind: RasterKind) -> Result<RasterGrid, RasterError> {
    let malformed = |message: String| RasterError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|source| RasterError::Io {
        kind,
        path: path.to_path_buf(),
        source,
    })?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(tiff_err(path))?
        .with_limits(Limits::unlimited());

    let bands = dec
        .find_tag_unsigned::<u16>(Tag::SamplesPerPixel)
        .map_err(tiff_err(path))?
        .unwrap_or(1) as usize;
    if bands != 1 {
        return Err(RasterError::MultiBand {
            path: path.to_path_buf(),
            bands,
        });
    }
    let (width, height) = dec.dimensions().map_err(tiff_err(path))?;
    let (n_cols, n_rows) = (width as usize, height as usize);

    let (origin_x, origin_y, cell_x, cell_y) = if let Some(t) = dec
        .find_tag(Tag::ModelTransformationTag)
        .map_err(tiff_err(path))?
    {
        let t = t.into_f64_vec().map_err(tiff_err(path))?;
        if t.len() < 8 || t[1] != 0.0 || t[4] != 0.0 {
            return Err(malformed("rotated or truncated ModelTransformation is not supported".into()));
        }
        (t[3], t[7], t[0], t[5])
    } else {
        let scale = dec
            .find_tag(Tag::ModelPixelScaleTag)
            .map_err(tiff_err(path))?
            .ok_or_else(|| malformed("missing georeferencing (ModelPixelScale)".into()))?
            .into_f64_vec()
            .map_err(tiff_err(path))?;
        let tie = dec
            .find_tag(Tag::ModelTiepointTag)
            .map_err(tiff_err(path))?
            .ok_or_else(|| malformed("missing georeferencing (ModelTiepoint)".into()))?
            .into_f64_vec()
            .map_err(tiff_err(path))?;
        if scale.len() < 2 || tie.len() < 6 {
            return Err(malformed("truncated georeferencing tags".into()));
        }
        let (sx, sy) = (scale[0], scale[1]);
        (tie[3] - tie[0] * sx, tie[4] + tie[1] * sy, sx, -sy)
    };
    if !(cell_x.is_finite() && cell_x > 0.0 && cell_y.is_finite() && cell_y != 0.0) {
        return Err(malformed(format!("non-finite or zero cell size {cell_x} x {cell_y}")));
    }

    let geokeys = dec
        .find_tag(Tag::GeoKeyDirectoryTag)
        .map_err(tiff_err(path))?
        .map(|v| v.into_u16_vec())
        .transpose()
        .map_err(tiff_err(path))?
        .unwrap_or_default();
    let ascii_params = dec
        .find_tag(Tag::GeoAsciiParamsTag)
        .map_err(tiff_err(path))?
        .map(|v| v.into_string())
        .transpose()
        .map_err(tiff_err(path))?
        .unwrap_or_default();
    let keys = parse_geokeys(&geokeys);
    let (origin_x, origin_y) = if keys.raster_type == Some(RASTER_PIXEL_IS_POINT) {
        (origin_x - 0.5 * cell_x, origin_y - 0.5 * cell_y)
    } else {
        (origin_x, origin_y)
    };
    let crs_tag = match (keys.projected, keys.geographic, keys.citation) {
        (Some(code), _, _) | (None, Some(code), _) => format!("EPSG:{code}"),
        (None, None, Some((offset, count))) => ascii_params
            .get(offset..(offset + count).min(ascii_params.len()))
            .unwrap_or("")
            .trim_end_matches(['|', '\0'])
            .to_string(),
        _ => String::new(),
    };

    let nodata = dec
        .find_tag(Tag::GdalNodata)
        .map_err(tiff_err(path))?
        .map(|v| v.into_string())
        .transpose()
        .map_err(tiff_err(path))?
        .and_then(|s| s.trim_matches(|c: char| c == '\0' || c.is_whitespace()).parse::<f64>().ok());

    let values: Vec<f64> = match dec.read_image().map_err(tiff_err(path))? {
        DecodingResult::F64(v) => v,
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        _ => return Err(malformed("only float32/float64 sample formats are supported".into())),
    };
    if values.iter().any(|v| v.is_infinite()) {
        return Err(malformed("non-finite cell value".into()));
    }
    RasterGrid::new(origin_x, origin_y, cell_x, cell_y, n_rows, n_cols, values, nodata, crs_tag)
        .map_err(|e| malformed(e.to_string()))
}

#[derive(Default)]
struct GeoKeys {
    raster_type: Option<u16>,
    projected: Option<u16>,
    geographic: Option<u16>,
    citation: Option<(usize, usize)>,
}

fn parse_geokeys(dir: &[u16]) -> GeoKeys {
    let mut keys = GeoKeys::default();
    if dir.len() < 4 {
        return keys;
    }
    for entry in dir[4..].chunks_exact(4).take(dir[3] as usize) {
        let (id, location, count, value) = (entry[0], entry[1], entry[2], entry[3]);
        match (id, location) {
            (KEY_RASTER_TYPE, 0) => keys.raster_type = Some(value),
            (KEY_PROJECTED_CRS, 0) => keys.projected = Some(value),
            (KEY_GEOGRAPHIC_CRS, 0) => keys.geographic = Some(value),
            (KEY_CITATION, loc) if loc == Tag::GeoAsciiParamsTag.to_u16() => {
                keys.citation = Some((value as usize, count as usize))
            }
            _ => {}
        }
    }
    keys
}

/// Writes a single-band float64 GeoTIFF with pixel-is-area georeferencing.
pub fn write_geotiff(grid: &RasterGrid, path: &Path) -> Result<(), RasterError> {
    let io_err = |source| RasterError::Io {
        kind: RasterKind::Dem,
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(tiff_err(path))?;
    let mut image = enc
        .new_image::<Gray64Float>(grid.n_cols as u32, grid.n_rows as u32)
        .map_err(tiff_err(path))?;

    let dir = image.encoder();
    let scale = [grid.cell_size_x, -grid.cell_size_y, 0.0];
    let tie = [0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0];
    dir.write_tag(Tag::ModelPixelScaleTag, &scale[..]).map_err(tiff_err(path))?;
    dir.write_tag(Tag::ModelTiepointTag, &tie[..]).map_err(tiff_err(path))?;

    let epsg = grid
        .crs_tag
        .strip_prefix("EPSG:")
        .and_then(|c| c.parse::<u16>().ok());
    let mut keys: Vec<[u16; 4]> = vec![[KEY_MODEL_TYPE, 0, 1, 1], [KEY_RASTER_TYPE, 0, 1, 1]];
    let mut ascii = String::new();
    match epsg {
        Some(code) => keys.push([KEY_PROJECTED_CRS, 0, 1, code]),
        None if !grid.crs_tag.is_empty() => {
            ascii = format!("{}|", grid.crs_tag);
            keys.push([KEY_CITATION, Tag::GeoAsciiParamsTag.to_u16(), ascii.len() as u16, 0]);
        }
        None => {}
    }
    keys.sort_by_key(|k| k[0]);
    let mut directory = vec![1u16, 1, 0, keys.len() as u16];
    directory.extend(keys.iter().flatten());
    dir.write_tag(Tag::GeoKeyDirectoryTag, &directory[..]).map_err(tiff_err(path))?;
    if !ascii.is_empty() {
        dir.write_tag(Tag::GeoAsciiParamsTag, ascii.as_str()).map_err(tiff_err(path))?;
    }
    if let Some(nd) = grid.nodata {
        dir.write_tag(Tag::GdalNodata, format!("{nd}").as_str()).map_err(tiff_err(path))?;
    }

    let data: Vec<f64> = match grid.nodata {
        Some(nd) => grid.values().iter().map(|&v| if v.is_nan() { nd } else { v }).collect(),
        None => grid.values().to_vec(),
    };
    image.write_data(&data).map_err(tiff_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::load_raster;

    #[test]
    fn round_trip_preserves_values_geometry_and_crs() {
        let dir = tempfile::tempdir().unwrap();
        for (name, tag) in [("a.tif", "EPSG:32654"), ("b.tif", "local grid"), ("c.tif", "")] {
            let p = dir.path().join(name);
            let vals: Vec<f64> = (0..12).map(|i| (i as f64).sqrt() * 3.7 - 1.0).collect();
            let g = RasterGrid::new(350000.5, 4100000.0, 0.5, -0.5, 3, 4, vals, None, tag).unwrap();
            write_geotiff(&g, &p).unwrap();
            let back = load_raster(&p, RasterKind::Dem).unwrap();
            assert_eq!(back, g, "{name}");
        }
    }

    #[test]
    fn nodata_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nd.tiff");
        let g = RasterGrid::new(0.0, 2.0, 1.0, -1.0, 2, 2, vec![1.0, -32768.0, 2.0, 3.0], Some(-32768.0), "")
            .unwrap();
        write_geotiff(&g, &p).unwrap();
        let back = load_raster(&p, RasterKind::Geoid).unwrap();
        assert_eq!(back.nodata, Some(-32768.0));
        assert_eq!(back.sample_point(1.5, 1.5), None);
        assert_eq!(back.sample_point(0.5, 0.5), Some(2.0));
    }

    #[test]
    fn multiband_is_rejected() {
        use tiff::encoder::colortype::RGB32Float;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.tif");
        let mut enc = TiffEncoder::new(BufWriter::new(File::create(&p).unwrap())).unwrap();
        enc.write_image::<RGB32Float>(2, 1, &[0.0f32; 6]).unwrap();
        drop(enc);
        assert!(matches!(
            load_raster(&p, RasterKind::Dem),
            Err(RasterError::MultiBand { bands: 3, .. })
        ));
    }

    #[test]
    fn missing_georeferencing_is_an_error() {
        use tiff::encoder::colortype::Gray32Float;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.tif");
        let mut enc = TiffEncoder::new(BufWriter::new(File::create(&p).unwrap())).unwrap();
        enc.write_image::<Gray32Float>(2, 2, &[1.0f32; 4]).unwrap();
        drop(enc);
        assert!(matches!(load_raster(&p, RasterKind::Dem), Err(RasterError::Malformed { .. })));
    }
}
