use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;

use super::BoundingBox;
use crate::error::{Error, Result};
use crate::waveforms::RatClass;

/// One Pascal VOC annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BoundingBox>,
}

pub fn export_voc(ann: &VocAnnotation) -> String {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str("  <folder>ratscope</folder>\n");
    out.push_str(&format!("  <filename>{}</filename>\n", escape(ann.filename.as_str())));
    out.push_str(&format!(
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>1</depth>\n  </size>\n",
        ann.width, ann.height
    ));
    out.push_str("  <segmented>0</segmented>\n");
    for b in &ann.boxes {
        out.push_str("  <object>\n");
        out.push_str(&format!("    <name>{}</name>\n", b.class.name()));
        out.push_str("    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n");
        out.push_str(&format!(
            "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n",
            b.x_min + 1,
            b.y_min + 1,
            b.x_max,
            b.y_max
        ));
        out.push_str("  </object>\n");
    }
    out.push_str("</annotation>\n");
    out
}

#[derive(Default)]
struct PendingObject {
    name: Option<String>,
    xmin: Option<usize>,
    ymin: Option<usize>,
    xmax: Option<usize>,
    ymax: Option<usize>,
}

fn line_of(text: &str, pos: usize) -> usize {
    text.as_bytes()[..pos.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

pub fn import_voc(text: &str) -> Result<VocAnnotation> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let err = |pos: usize, message: String| Error::Parse {
        line: line_of(text, pos),
        message,
    };

    let mut path: Vec<String> = Vec::new();
    let mut filename = String::new();
    let mut width = None;
    let mut height = None;
    let mut boxes = Vec::new();
    let mut object: Option<PendingObject> = None;
    let mut seen_root = false;

    loop {
        let event = match reader.read_event() {
            Ok(ev) => ev,
            Err(e) => return Err(err(reader.error_position() as usize, e.to_string())),
        };
        let pos = reader.buffer_position() as usize;
        match event {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if path.is_empty() {
                    if name != "annotation" {
                        return Err(err(pos, format!("root element is <{name}>, expected <annotation>")));
                    }
                    seen_root = true;
                }
                if name == "object" && path.len() == 1 {
                    object = Some(PendingObject::default());
                }
                path.push(name);
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if path.pop().as_deref() != Some(name.as_str()) {
                    return Err(err(pos, format!("unexpected </{name}>")));
                }
                if name == "object" && path.len() == 1 {
                    let o = object.take().unwrap_or_default();
                    let missing = |field: &str| err(pos, format!("object is missing <{field}>"));
                    let class: RatClass = o
                        .name
                        .ok_or_else(|| missing("name"))?
                        .parse()
                        .map_err(|e: Error| err(pos, e.to_string()))?;
                    let xmin = o.xmin.ok_or_else(|| missing("xmin"))?;
                    let ymin = o.ymin.ok_or_else(|| missing("ymin"))?;
                    let xmax = o.xmax.ok_or_else(|| missing("xmax"))?;
                    let ymax = o.ymax.ok_or_else(|| missing("ymax"))?;
                    if xmin < 1 || ymin < 1 || xmax < xmin || ymax < ymin {
                        return Err(err(pos, format!("invalid bndbox {xmin},{ymin},{xmax},{ymax}")));
                    }
                    boxes.push(BoundingBox::new(xmin - 1, xmax, ymin - 1, ymax, class));
                }
            }
            Event::Text(t) => {
                let value = t.unescape().map_err(|e| err(pos, e.to_string()))?.into_owned();
                let number = || {
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| err(pos, format!("expected an integer, found `{value}`")))
                };
                let p: Vec<&str> = path.iter().map(String::as_str).collect();
                match p.as_slice() {
                    ["annotation", "filename"] => filename = value.clone(),
                    ["annotation", "size", "width"] => width = Some(number()?),
                    ["annotation", "size", "height"] => height = Some(number()?),
                    ["annotation", "object", "name"] => {
                        object.get_or_insert_with(Default::default).name = Some(value.clone())
                    }
                    ["annotation", "object", "bndbox", field] => {
                        let o = object.get_or_insert_with(Default::default);
                        let v = Some(number()?);
                        match *field {
                            "xmin" => o.xmin = v,
                            "ymin" => o.ymin = v,
                            "xmax" => o.xmax = v,
                            "ymax" => o.ymax = v,
                            _ => {}
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let end = text.len();
    if !seen_root {
        return Err(err(end, "no <annotation> element".into()));
    }
    if !path.is_empty() {
        return Err(err(end, format!("unclosed <{}>", path.last().unwrap())));
    }
    Ok(VocAnnotation {
        filename,
        width: width.ok_or_else(|| err(end, "missing <size><width>".into()))?,
        height: height.ok_or_else(|| err(end, "missing <size><height>".into()))?,
        boxes,
    })
}
