//! The hash mocks reproduced from their documented formula.

use std::sync::Arc;

use base64::Engine;
use polysource_core::gateway::{EndpointKind, Gateway, ImageRef, ModelEndpoint, ResponseCache};
use sha2::{Digest, Sha256};

fn components(bytes: &[u8], dims: usize) -> Vec<f64> {
    let d = Sha256::digest(bytes);
    let mut s = u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]]);
    let mut out = Vec::with_capacity(dims);
    for _ in 0..dims {
        s = s.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        out.push(((z >> 11) as f64) * (2.0 / 9007199254740992.0) - 1.0);
    }
    out
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn text_vector(text: &str, dims: usize) -> Vec<f64> {
    let toks = tokens(text);
    if toks.is_empty() {
        return unit(components(b"", dims));
    }
    let mut acc = vec![0.0; dims];
    for t in toks {
        for (a, c) in acc.iter_mut().zip(components(t.as_bytes(), dims)) {
            *a += c;
        }
    }
    unit(acc)
}

fn gateway(kind: EndpointKind, url: &str) -> Gateway {
    Gateway::connect(ModelEndpoint::new(kind, "mock", url), Arc::new(ResponseCache::in_memory())).unwrap()
}

#[test]
fn text_embedder_matches_formula() {
    let g = gateway(EndpointKind::TextEmbed, "mock://hash?dims=48");
    let texts: Vec<String> = ["renal fat tumor", "", "Fat-containing renal TUMOR, 3 cm", "x x"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (t, v) in texts.iter().zip(g.embed_texts(&texts).unwrap()) {
        let want = text_vector(t, 48);
        for (a, b) in v.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{t}");
        }
    }
}

#[test]
fn image_embedder_on_one_pixel_png() {
    let img = image::RgbImage::from_pixel(1, 1, image::Rgb([200, 10, 30]));
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
    let g = gateway(EndpointKind::ImageEmbed, "mock://hash?dims=32");
    let v = g.embed_image(&ImageRef::Inline(Arc::from(png.clone()))).unwrap();
    let want = unit(components(&png, 32));
    for (a, b) in v.values().iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
    // same bytes through a file give the same vector
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    std::fs::write(&path, &png).unwrap();
    assert_eq!(g.embed_image(&ImageRef::Path(path)).unwrap(), v);
    let _ = base64::engine::general_purpose::STANDARD.encode(&png);
}
