//! Synthetic interaction logs and catalogs for tests, benchmarks and demos.

use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Interaction, Item};

const BRANDS: &[&str] = &[
    "Acme",
    "Northwind",
    "Bluefield",
    "Ridgeway",
    "Copperleaf",
    "Harbor",
    "Summit",
    "Larkspur",
    "Oakmont",
    "Brightwater",
];
const ADJECTIVES: &[&str] = &[
    "Portable",
    "Deluxe",
    "Compact",
    "Classic",
    "Waterproof",
    "Lightweight",
    "Wooden",
    "Magnetic",
    "Folding",
    "Insulated",
    "Organic",
    "Reusable",
];
const NOUNS: &[&str] = &[
    "Lantern",
    "Backpack",
    "Puzzle",
    "Water Bottle",
    "Yoga Mat",
    "Sunscreen",
    "Scarf",
    "Kite",
    "Building Blocks",
    "Hair Dryer",
    "Running Shoes",
    "Tent",
    "Board Game",
    "Lip Balm",
    "Jacket",
    "Dumbbell Set",
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Interactions per user are drawn uniformly from this inclusive range.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 1500,
            min_len: 3,
            max_len: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub catalog: Vec<Item>,
    pub interactions: Vec<Interaction>,
}

fn title_for(i: usize, rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {} {} {:04}",
        BRANDS[rng.random_range(0..BRANDS.len())],
        ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
        NOUNS[rng.random_range(0..NOUNS.len())],
        i
    )
}

fn catalog(items: usize, rng: &mut ChaCha8Rng) -> Vec<Item> {
    (0..items)
        .map(|i| Item {
            item_id: format!("I{i:05}"),
            title: title_for(i, rng),
            image_ref: Some(format!("images/I{i:05}.png")),
        })
        .collect()
}

/// Random users with distinct items per user and increasing timestamps.
pub fn generate(spec: &SyntheticSpec) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let catalog = catalog(spec.items, &mut rng);
    let mut interactions = Vec::new();
    for u in 0..spec.users {
        let len = rng
            .random_range(spec.min_len..=spec.max_len)
            .min(spec.items);
        let picks = rand::seq::index::sample(&mut rng, spec.items, len);
        let mut ts = 1_600_000_000 + rng.random_range(0..1_000_000i64);
        for idx in picks {
            ts += rng.random_range(1..100_000);
            interactions.push(Interaction {
                user_id: format!("U{u:05}"),
                item_id: catalog[idx].item_id.clone(),
                timestamp: ts,
            });
        }
    }
    SyntheticDataset {
        catalog,
        interactions,
    }
}

/// A log with exactly `users` users, `items` distinct interacted items and
/// `interactions` interactions, each user having at least two.
///
/// Panics unless `2 * users <= interactions` and `items <= interactions`.
pub fn exact_counts(users: usize, items: usize, interactions: usize) -> SyntheticDataset {
    assert!(users > 0 && 2 * users <= interactions && items <= interactions && items > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ab1e);
    let catalog = catalog(items, &mut rng);
    let log = (0..interactions)
        .map(|j| Interaction {
            user_id: format!("U{:05}", j % users),
            item_id: catalog[j % items].item_id.clone(),
            timestamp: j as i64,
        })
        .collect();
    SyntheticDataset {
        catalog,
        interactions: log,
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

fn adler32(bytes: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in bytes {
        a = (a + u32::from(x)) % 65_521;
        b = (b + a) % 65_521;
    }
    (b << 16) | a
}

/// A valid `size`×`size` solid-colour RGB PNG, zlib stored blocks only.
pub fn solid_png(size: u32, rgb: [u8; 3]) -> Vec<u8> {
    // Each scanline is a filter byte (0, none) followed by the pixels.
    let mut row = vec![0u8];
    for _ in 0..size {
        row.extend_from_slice(&rgb);
    }
    let raw = row.repeat(size as usize);
    let mut z = vec![0x78, 0x01];
    let chunks: Vec<&[u8]> = raw.chunks(65_535).collect();
    for (i, c) in chunks.iter().enumerate() {
        z.push(u8::from(i + 1 == chunks.len()));
        let len = c.len() as u16;
        z.extend_from_slice(&len.to_le_bytes());
        z.extend_from_slice(&(!len).to_le_bytes());
        z.extend_from_slice(c);
    }
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut png = vec![0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    let mut chunk = |kind: &[u8; 4], data: &[u8]| {
        png.extend_from_slice(&(data.len() as u32).to_be_bytes());
        let mut body = kind.to_vec();
        body.extend_from_slice(data);
        png.extend_from_slice(&body);
        png.extend_from_slice(&crc32(&body).to_be_bytes());
    };
    let mut ihdr = Vec::new();
    ihdr.extend_from_slice(&size.to_be_bytes());
    ihdr.extend_from_slice(&size.to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
    chunk(b"IHDR", &ihdr);
    chunk(b"IDAT", &z);
    chunk(b"IEND", &[]);
    png
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub interactions: PathBuf,
    pub catalog: PathBuf,
    pub images: PathBuf,
}

/// Writes `interactions.jsonl`, `catalog.jsonl` and one PNG per item under
/// `dir/images`. Image references in the catalog are absolute paths.
pub fn write_dataset(dir: &Path, data: &SyntheticDataset) -> io::Result<DatasetFiles> {
    std::fs::create_dir_all(dir.join("images"))?;
    let images = std::fs::canonicalize(dir.join("images"))?;
    let mut catalog = String::new();
    for (i, item) in data.catalog.iter().enumerate() {
        let mut item = item.clone();
        if item.image_ref.is_some() {
            let path = images.join(format!("{}.png", item.item_id));
            // Distinct colour per catalog position, so no two images share bytes.
            let rgb = [
                (i >> 16) as u8 ^ 0x5a,
                (i >> 8) as u8 ^ 0x3c,
                i as u8 ^ 0x96,
            ];
            std::fs::write(&path, solid_png(8, rgb))?;
            item.image_ref = Some(path.to_string_lossy().into_owned());
        }
        catalog.push_str(&serde_json::to_string(&item).map_err(io::Error::other)?);
        catalog.push('\n');
    }
    let mut log = String::new();
    for it in &data.interactions {
        log.push_str(&serde_json::to_string(it).map_err(io::Error::other)?);
        log.push('\n');
    }
    let files = DatasetFiles {
        interactions: dir.join("interactions.jsonl"),
        catalog: dir.join("catalog.jsonl"),
        images,
    };
    std::fs::write(&files.catalog, catalog)?;
    std::fs::write(&files.interactions, log)?;
    Ok(files)
}
