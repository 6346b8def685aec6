//! Readers for VGG Image Annotator (VIA) documents.
//!
//! Two shapes are accepted:
//!   * project / export JSON — a map of file entries (optionally wrapped in
//!     `_via_img_metadata`), each with `filename`, `size`, `regions` and
//!     `file_attributes`;
//!   * the CSV export, whose `region_shape_attributes` and
//!     `region_attributes` columns hold embedded JSON.
//!
//! Each region must carry polygon shape attributes (`all_points_x` /
//! `all_points_y`) and a region attribute with the class name. The class is
//! looked up under the keys `class`, `label`, `type` or `name` (first match),
//! falling back to the first string-valued attribute. Unknown extra
//! attributes are ignored.
//!
//! Image dimensions come from `width` / `height` file attributes when
//! present, otherwise from the ceiling of the polygon extent.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::taxonomy::ClassLabel;

use super::{AnnotatedImage, Polygon, Region};

const CLASS_KEYS: [&str; 4] = ["class", "label", "type", "name"];

/// Parse a VIA document (JSON project/export or CSV export) into annotated
/// images, ordered by filename.
pub fn parse_via(document: &str) -> Result<Vec<AnnotatedImage>> {
    let trimmed = document.trim_start();
    if trimmed.starts_with('{') {
        parse_json(document)
    } else {
        parse_csv(document)
    }
}

fn parse_json(document: &str) -> Result<Vec<AnnotatedImage>> {
    let root: Value = serde_json::from_str(document).map_err(|e| Error::Parse {
        entry: "<document>".into(),
        message: e.to_string(),
    })?;
    let map = match &root {
        Value::Object(obj) => match obj.get("_via_img_metadata") {
            Some(Value::Object(inner)) => inner,
            Some(_) => {
                return Err(Error::Parse {
                    entry: "_via_img_metadata".into(),
                    message: "expected an object".into(),
                })
            }
            None => obj,
        },
        _ => {
            return Err(Error::Parse {
                entry: "<document>".into(),
                message: "expected a JSON object keyed by file entries".into(),
            })
        }
    };

    let mut images = Vec::new();
    for (key, entry) in map {
        if key.starts_with("_via") {
            continue; // project settings, attribute definitions
        }
        images.push(parse_json_entry(key, entry)?);
    }
    finish(images)
}

fn parse_json_entry(key: &str, entry: &Value) -> Result<AnnotatedImage> {
    let obj = entry.as_object().ok_or_else(|| Error::Parse {
        entry: key.into(),
        message: "file entry is not an object".into(),
    })?;
    let filename = obj
        .get("filename")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse {
            entry: key.into(),
            message: "missing filename".into(),
        })?
        .to_string();

    // VIA 2.x stores regions as an array; VIA 1.x as an object keyed by index.
    let mut regions = Vec::new();
    match obj.get("regions") {
        Some(Value::Array(items)) => {
            for item in items {
                regions.push(parse_json_region(&filename, item)?);
            }
        }
        Some(Value::Object(items)) => {
            for item in items.values() {
                regions.push(parse_json_region(&filename, item)?);
            }
        }
        None | Some(Value::Null) => {}
        Some(_) => {
            return Err(Error::Parse {
                entry: filename,
                message: "regions must be an array or object".into(),
            })
        }
    }

    let attrs = obj.get("file_attributes").cloned().unwrap_or(Value::Null);
    build_image(filename, regions, &attrs)
}

fn parse_json_region(entry: &str, value: &Value) -> Result<Region> {
    let shape = value.get("shape_attributes").ok_or_else(|| Error::Parse {
        entry: entry.into(),
        message: "region missing shape_attributes".into(),
    })?;
    let polygon = parse_polygon(entry, shape)?;
    let attrs = value.get("region_attributes").ok_or_else(|| Error::Parse {
        entry: entry.into(),
        message: "region missing region_attributes".into(),
    })?;
    let label = parse_class(entry, attrs)?;
    Ok(Region { polygon, label })
}

fn parse_polygon(entry: &str, shape: &Value) -> Result<Polygon> {
    let name = shape.get("name").and_then(Value::as_str).unwrap_or("");
    if name != "polygon" && name != "polyline" {
        return Err(Error::Parse {
            entry: entry.into(),
            message: format!("unsupported region shape {name:?}; only polygon is accepted"),
        });
    }
    let xs = coord_list(entry, shape, "all_points_x")?;
    let ys = coord_list(entry, shape, "all_points_y")?;
    if xs.len() != ys.len() {
        return Err(Error::Parse {
            entry: entry.into(),
            message: format!(
                "all_points_x ({}) and all_points_y ({}) differ in length",
                xs.len(),
                ys.len()
            ),
        });
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateRegion {
            entry: entry.into(),
            vertices: xs.len(),
        });
    }
    Polygon::new(xs.into_iter().zip(ys).collect())
}

fn coord_list(entry: &str, shape: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = shape.get(key).and_then(Value::as_array).ok_or_else(|| Error::Parse {
        entry: entry.into(),
        message: format!("shape_attributes missing {key}"),
    })?;
    arr.iter()
        .map(|v| {
            v.as_f64().ok_or_else(|| Error::Parse {
                entry: entry.into(),
                message: format!("{key} holds a non-numeric coordinate"),
            })
        })
        .collect()
}

fn parse_class(entry: &str, attrs: &Value) -> Result<ClassLabel> {
    let obj = attrs.as_object().ok_or_else(|| Error::Parse {
        entry: entry.into(),
        message: "region_attributes is not an object".into(),
    })?;
    for key in CLASS_KEYS {
        if let Some(raw) = lookup_str_ci(obj, key) {
            return ClassLabel::parse(raw);
        }
    }
    // Fall back to the first string attribute (VIA projects name the
    // attribute freely).
    if let Some(raw) = obj.values().find_map(Value::as_str) {
        return ClassLabel::parse(raw);
    }
    Err(Error::Parse {
        entry: entry.into(),
        message: "no class attribute found in region_attributes".into(),
    })
}

fn lookup_str_ci<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a str> {
    obj.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .and_then(|(_, v)| v.as_str())
}

fn build_image(filename: String, regions: Vec<Region>, file_attributes: &Value) -> Result<AnnotatedImage> {
    let mut width = attr_dimension(file_attributes, "width");
    let mut height = attr_dimension(file_attributes, "height");
    if width.is_none() || height.is_none() {
        // Fall back to the polygon extent.
        let mut max_x = 0.0f64;
        let mut max_y = 0.0f64;
        for r in &regions {
            let (_, _, bx, by) = r.polygon.bounds();
            max_x = max_x.max(bx);
            max_y = max_y.max(by);
        }
        if max_x > 0.0 && max_y > 0.0 {
            width = width.or(Some(max_x.ceil() as u32));
            height = height.or(Some(max_y.ceil() as u32));
        }
    }
    let (width, height) = match (width, height) {
        (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
        _ => {
            return Err(Error::Parse {
                entry: filename,
                message: "cannot determine image dimensions; add width/height file attributes".into(),
            })
        }
    };
    Ok(AnnotatedImage {
        image_id: filename.clone(),
        source_path: filename,
        width,
        height,
        regions,
    })
}

fn attr_dimension(attrs: &Value, key: &str) -> Option<u32> {
    let v = attrs.as_object()?.iter().find(|(k, _)| k.eq_ignore_ascii_case(key))?.1;
    match v {
        Value::Number(n) => n.as_f64().map(|f| f as u32),
        Value::String(s) => s.trim().parse::<u32>().ok(),
        _ => None,
    }
}

fn parse_csv(document: &str) -> Result<Vec<AnnotatedImage>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(document.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            entry: "<csv header>".into(),
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (fn_col, shape_col, attr_col) = match (
        col("filename"),
        col("region_shape_attributes"),
        col("region_attributes"),
    ) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Parse {
                entry: "<csv header>".into(),
                message: "expected filename, region_shape_attributes and region_attributes columns".into(),
            })
        }
    };
    let file_attr_col = col("file_attributes");

    // Preserve first-seen order per filename.
    let mut order = Vec::new();
    let mut grouped: BTreeMap<String, (Vec<Region>, Value)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            entry: "<csv row>".into(),
            message: e.to_string(),
        })?;
        let filename = record.get(fn_col).unwrap_or("").to_string();
        if filename.is_empty() {
            continue;
        }
        let entry = grouped.entry(filename.clone()).or_insert_with(|| {
            order.push(filename.clone());
            (Vec::new(), Value::Null)
        });
        if let Some(c) = file_attr_col {
            if entry.1.is_null() {
                if let Some(raw) = record.get(c).filter(|s| !s.trim().is_empty()) {
                    entry.1 = serde_json::from_str(raw).unwrap_or(Value::Null);
                }
            }
        }
        let shape_raw = record.get(shape_col).unwrap_or("").trim();
        if shape_raw.is_empty() || shape_raw == "{}" {
            continue; // zero-region file row
        }
        let shape: Value = serde_json::from_str(shape_raw).map_err(|e| Error::Parse {
            entry: filename.clone(),
            message: format!("bad region_shape_attributes JSON: {e}"),
        })?;
        let polygon = parse_polygon(&filename, &shape)?;
        let attrs: Value = serde_json::from_str(record.get(attr_col).unwrap_or("{}")).map_err(|e| Error::Parse {
            entry: filename.clone(),
            message: format!("bad region_attributes JSON: {e}"),
        })?;
        let label = parse_class(&filename, &attrs)?;
        entry.0.push(Region { polygon, label });
    }

    let mut images = Vec::new();
    for filename in order {
        let (regions, attrs) = grouped.remove(&filename).unwrap();
        images.push(build_image(filename, regions, &attrs)?);
    }
    finish(images)
}

fn finish(mut images: Vec<AnnotatedImage>) -> Result<Vec<AnnotatedImage>> {
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for pair in images.windows(2) {
        if pair[0].image_id == pair[1].image_id {
            return Err(Error::Parse {
                entry: pair[0].image_id.clone(),
                message: "duplicate image id in document".into(),
            });
        }
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_doc(class: &str) -> String {
        format!(
            r#"{{
              "slope.jpg12345": {{
                "filename": "slope.jpg",
                "size": 12345,
                "file_attributes": {{"width": 640, "height": 480}},
                "regions": [
                  {{
                    "shape_attributes": {{
                      "name": "polygon",
                      "all_points_x": [10, 100, 100, 10],
                      "all_points_y": [20, 20, 80, 80]
                    }},
                    "region_attributes": {{"class": "{class}", "note": "ignored"}}
                  }}
                ]
              }}
            }}"#
        )
    }

    #[test]
    fn parses_minimal_single_region_document() {
        let images = parse_via(&minimal_doc("Landslide")).unwrap();
        assert_eq!(images.len(), 1);
        let img = &images[0];
        assert_eq!(img.image_id, "slope.jpg");
        assert_eq!((img.width, img.height), (640, 480));
        assert_eq!(img.regions.len(), 1);
        assert_eq!(img.regions[0].label, ClassLabel::Landslide);
        assert_eq!(img.regions[0].polygon.vertices.len(), 4);
    }

    #[test]
    fn unknown_class_is_a_taxonomy_error() {
        let err = parse_via(&minimal_doc("Road")).unwrap_err();
        assert!(matches!(err, Error::Taxonomy(s) if s == "Road"));
    }

    #[test]
    fn two_vertex_polygon_is_degenerate() {
        let doc = r#"{
          "a.png1": {
            "filename": "a.png",
            "size": 1,
            "file_attributes": {"width": 8, "height": 8},
            "regions": [{
              "shape_attributes": {"name": "polygon", "all_points_x": [1, 2], "all_points_y": [1, 2]},
              "region_attributes": {"class": "Landslide"}
            }]
          }
        }"#;
        assert!(matches!(
            parse_via(doc).unwrap_err(),
            Error::DegenerateRegion { vertices: 2, .. }
        ));
    }

    #[test]
    fn zero_region_entries_are_kept() {
        let doc = r#"{
          "bare.png9": {
            "filename": "bare.png",
            "size": 9,
            "file_attributes": {"width": 32, "height": 16},
            "regions": []
          }
        }"#;
        let images = parse_via(doc).unwrap();
        assert_eq!(images.len(), 1);
        assert!(images[0].regions.is_empty());
    }

    #[test]
    fn malformed_json_names_the_document() {
        let err = parse_via("{ not valid").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn csv_export_is_accepted() {
        let doc = concat!(
            "filename,file_size,file_attributes,region_count,region_id,region_shape_attributes,region_attributes\n",
            "a.png,10,\"{\"\"width\"\": 64, \"\"height\"\": 48}\",1,0,",
            "\"{\"\"name\"\": \"\"polygon\"\", \"\"all_points_x\"\": [1,20,20,1], \"\"all_points_y\"\": [1,1,30,30]}\",",
            "\"{\"\"class\"\": \"\"Water body\"\"}\"\n",
        );
        let images = parse_via(doc).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].regions[0].label, ClassLabel::WaterBody);
        assert_eq!((images[0].width, images[0].height), (64, 48));
    }

    #[test]
    fn circle_shape_is_rejected() {
        let doc = r#"{
          "c.png2": {
            "filename": "c.png",
            "size": 2,
            "file_attributes": {"width": 8, "height": 8},
            "regions": [{
              "shape_attributes": {"name": "circle", "cx": 4, "cy": 4, "r": 2},
              "region_attributes": {"class": "Landslide"}
            }]
          }
        }"#;
        assert!(matches!(parse_via(doc).unwrap_err(), Error::Parse { .. }));
    }
}
