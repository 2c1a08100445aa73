//! Parametric multi-part shapes with known part decompositions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{save_obj, Face, Point3, TriangleMesh};
use crate::part_graph::PartLabeling;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Table,
    Dumbbell,
    StackedBoxes,
    LBracket,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Table,
        ShapeFamily::Dumbbell,
        ShapeFamily::StackedBoxes,
        ShapeFamily::LBracket,
    ];
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Table => "table",
            ShapeFamily::Dumbbell => "dumbbell",
            ShapeFamily::StackedBoxes => "stacked-boxes",
            ShapeFamily::LBracket => "l-bracket",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ShapeFamily::Table),
            "dumbbell" => Ok(ShapeFamily::Dumbbell),
            "stacked-boxes" => Ok(ShapeFamily::StackedBoxes),
            "l-bracket" => Ok(ShapeFamily::LBracket),
            _ => Err(Error::invalid(format!("unknown shape family {s:?}"))),
        }
    }
}

/// Accumulates faces part by part.
#[derive(Default)]
struct Builder {
    vertices: Vec<Point3<f64>>,
    faces: Vec<Face>,
    labels: Vec<u32>,
    part: u32,
}

impl Builder {
    fn vertex(&mut self, p: Point3<f64>) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn face(&mut self, f: Face) {
        self.faces.push(f);
        self.labels.push(self.part);
    }

    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.face([a, b, c]);
        self.face([a, c, d]);
    }

    fn next_part(&mut self) {
        self.part += 1;
    }

    /// Axis-aligned box from `lo` to `hi`; returns the 4 top corners
    /// counter-clockwise from `(lo.x, lo.y)`.
    fn cuboid(&mut self, lo: Point3<f64>, hi: Point3<f64>, bottom: Option<[u32; 4]>) -> [u32; 4] {
        let b = match bottom {
            Some(b) => b,
            None => [
                self.vertex([lo[0], lo[1], lo[2]]),
                self.vertex([hi[0], lo[1], lo[2]]),
                self.vertex([hi[0], hi[1], lo[2]]),
                self.vertex([lo[0], hi[1], lo[2]]),
            ],
        };
        let t = [
            self.vertex([lo[0], lo[1], hi[2]]),
            self.vertex([hi[0], lo[1], hi[2]]),
            self.vertex([hi[0], hi[1], hi[2]]),
            self.vertex([lo[0], hi[1], hi[2]]),
        ];
        if bottom.is_none() {
            self.quad(b[0], b[3], b[2], b[1]);
        }
        self.quad(t[0], t[1], t[2], t[3]);
        for i in 0..4 {
            let j = (i + 1) % 4;
            self.quad(b[i], b[j], t[j], t[i]);
        }
        t
    }

    /// Hexagonal bipyramid around `c`.
    fn bipyramid(&mut self, c: Point3<f64>, r: f64, h: f64) {
        let top = self.vertex([c[0], c[1], c[2] + h]);
        let bot = self.vertex([c[0], c[1], c[2] - h]);
        let ring: Vec<u32> = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / 3.0;
                self.vertex([c[0] + r * a.cos(), c[1] + r * a.sin(), c[2]])
            })
            .collect();
        for i in 0..6 {
            let j = (i + 1) % 6;
            self.face([top, ring[i], ring[j]]);
            self.face([bot, ring[j], ring[i]]);
        }
    }

    fn finish(self) -> Result<(TriangleMesh<f64>, PartLabeling)> {
        Ok((
            TriangleMesh::new(self.vertices, self.faces)?,
            PartLabeling::new(self.labels)?,
        ))
    }
}

/// One random shape of `family` with its ground-truth labeling.
pub fn synth_shape<R: Rng>(family: ShapeFamily, rng: &mut R) -> Result<(TriangleMesh<f64>, PartLabeling)> {
    let mut b = Builder::default();
    match family {
        ShapeFamily::Table => {
            let (w, d) = (rng.gen_range(0.8..1.2), rng.gen_range(0.5..0.9));
            let h = rng.gen_range(0.5..0.9);
            let top = rng.gen_range(0.08..0.14);
            let leg = rng.gen_range(0.08..0.14);
            b.cuboid([0.0, 0.0, h], [w, d, h + top], None);
            for (x, y) in [(0.0, 0.0), (w - leg, 0.0), (w - leg, d - leg), (0.0, d - leg)] {
                b.next_part();
                b.cuboid([x, y, 0.0], [x + leg, y + leg, h], None);
            }
        }
        ShapeFamily::Dumbbell => {
            let len = rng.gen_range(0.8..1.2);
            let r = rng.gen_range(0.18..0.28);
            let bar = rng.gen_range(0.06..0.1);
            b.bipyramid([0.0, 0.0, 0.0], r, r);
            b.next_part();
            b.bipyramid([len, 0.0, 0.0], r, r);
            b.next_part();
            b.cuboid([r, -bar, -bar], [len - r, bar, bar], None);
        }
        ShapeFamily::StackedBoxes => {
            let (w, d) = (rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0));
            let h1 = rng.gen_range(0.3..0.6);
            let h2 = rng.gen_range(0.2..0.5);
            let rim = b.cuboid([0.0, 0.0, 0.0], [w, d, h1], None);
            b.next_part();
            b.cuboid([0.0, 0.0, h1], [w, d, h1 + h2], Some(rim));
        }
        ShapeFamily::LBracket => {
            let len = rng.gen_range(0.7..1.1);
            let h = rng.gen_range(0.6..1.0);
            let w = rng.gen_range(0.3..0.6);
            let t = rng.gen_range(0.1..0.18);
            b.cuboid([0.0, 0.0, 0.0], [len, w, t], None);
            b.next_part();
            b.cuboid([0.0, 0.0, t + 0.02], [t, w, h], None);
        }
    }
    b.finish()
}

/// Written corpus entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub family: ShapeFamily,
    pub mesh: PathBuf,
    pub labels: PathBuf,
}

pub const CORPUS_LIST: &str = "corpus.tsv";

/// Writes `count` shapes cycling through `families`; shape `i` uses its own
/// seeded generator, so corpora are reproducible.
pub fn synth_data(
    count: usize,
    families: &[ShapeFamily],
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<CorpusEntry>> {
    if count == 0 || families.is_empty() {
        return Err(Error::invalid("need at least one shape and one family"));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut list = String::from("id\tfamily\tmesh\tlabels\n");
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let family = families[i % families.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
        let (mesh, labels) = synth_shape(family, &mut rng)?;
        let id = format!("{family}_{i:05}");
        let mesh_path = out.join(format!("{id}.obj"));
        let label_path = out.join(format!("{id}.labels"));
        save_obj(&mesh, &mesh_path)?;
        labels.save(&label_path)?;
        list.push_str(&format!("{id}\t{family}\t{id}.obj\t{id}.labels\n"));
        entries.push(CorpusEntry {
            id,
            family,
            mesh: mesh_path,
            labels: label_path,
        });
    }
    let list_path = out.join(CORPUS_LIST);
    std::fs::write(&list_path, list).map_err(|e| Error::io(&list_path, e))?;
    Ok(entries)
}

/// Reads the list written by [`synth_data`].
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let dir = dir.as_ref();
    let path = dir.join(CORPUS_LIST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: "expected 4 tab-separated columns".into(),
            });
        }
        out.push(CorpusEntry {
            id: cols[0].to_string(),
            family: cols[1].parse()?,
            mesh: dir.join(cols[2]),
            labels: dir.join(cols[3]),
        });
    }
    Ok(out)
}
