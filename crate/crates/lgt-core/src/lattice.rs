//! Square-lattice geometry: vertices, oriented links, and plaquettes.
//!
//! Conventions (fixed once, used everywhere):
//!
//! * Vertices live on an `lx × ly` grid and are numbered row-major:
//!   `id(x, y) = y·lx + x`.
//! * Every link is *oriented* along +x or +y: it leaves its `tail` vertex and
//!   enters its `head` vertex. Links are numbered vertex-major, the x-link of
//!   a vertex before its y-link.
//! * A plaquette is the elementary square with corners
//!   `(x,y) → (x+1,y) → (x+1,y+1) → (x,y+1)`; its four links are stored in the
//!   order bottom, right, top, left, where bottom and right are traversed
//!   along their orientation and top and left against it.
//! * Vertex parity is `(x + y) mod 2`. Periodic boundaries require both
//!   extents even so the two-sublattice structure closes around the torus;
//!   odd periodic extents are rejected.
//!
//! The lattice spacing is fixed to 1 and only d = 2 is supported.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Boundary condition of the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Open,
    Periodic,
}

/// Direction of an oriented link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    X,
    Y,
}

/// Index of a vertex in the canonical row-major order.
pub type VertexId = usize;
/// Index of a link in the canonical vertex-major order.
pub type LinkId = usize;

/// An oriented link: leaves `tail`, enters `head`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub tail: VertexId,
    pub head: VertexId,
    pub direction: Direction,
}

/// Four directed links around an elementary square.
///
/// `links[0]` (bottom) and `links[1]` (right) are traversed along their
/// orientation, `links[2]` (top) and `links[3]` (left) against it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plaquette {
    pub links: [LinkId; 4],
    /// Bottom-left corner vertex.
    pub base: VertexId,
}

/// Immutable lattice geometry. Construct with [`Lattice::build`].
#[derive(Clone, Debug)]
pub struct Lattice {
    lx: usize,
    ly: usize,
    boundary: Boundary,
    links: Vec<Link>,
    plaquettes: Vec<Plaquette>,
    /// `link_from[v][0]` = x-link leaving `v`, `link_from[v][1]` = y-link.
    link_from: Vec<[Option<LinkId>; 2]>,
    /// Per vertex: (link id, +1 if the link leaves the vertex, −1 if it enters).
    incident: Vec<Vec<(LinkId, i8)>>,
}

impl Lattice {
    /// Builds the geometry, validating extents and boundary compatibility.
    pub fn build(lx: usize, ly: usize, boundary: Boundary) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::invalid(format!(
                "lattice extents must be positive, got {lx}×{ly}"
            )));
        }
        if boundary == Boundary::Periodic {
            if lx < 2 || ly < 2 {
                return Err(Error::invalid(format!(
                    "periodic boundaries need both extents ≥ 2, got {lx}×{ly}"
                )));
            }
            if lx % 2 != 0 || ly % 2 != 0 {
                return Err(Error::invalid(format!(
                    "periodic boundaries need even extents for a consistent \
                     even/odd vertex bipartition, got {lx}×{ly}"
                )));
            }
        }

        let n_vertices = lx * ly;
        let mut links = Vec::new();
        let mut link_from = vec![[None, None]; n_vertices];

        for v in 0..n_vertices {
            let (x, y) = (v % lx, v / lx);
            // x-link first, then y-link: canonical vertex-major order.
            let x_head = match boundary {
                Boundary::Open if x + 1 >= lx => None,
                Boundary::Open => Some(v + 1),
                Boundary::Periodic => Some(y * lx + (x + 1) % lx),
            };
            if let Some(head) = x_head {
                link_from[v][0] = Some(links.len());
                links.push(Link {
                    tail: v,
                    head,
                    direction: Direction::X,
                });
            }
            let y_head = match boundary {
                Boundary::Open if y + 1 >= ly => None,
                Boundary::Open => Some(v + lx),
                Boundary::Periodic => Some(((y + 1) % ly) * lx + x),
            };
            if let Some(head) = y_head {
                link_from[v][1] = Some(links.len());
                links.push(Link {
                    tail: v,
                    head,
                    direction: Direction::Y,
                });
            }
        }

        let mut incident = vec![Vec::new(); n_vertices];
        for (id, link) in links.iter().enumerate() {
            incident[link.tail].push((id, 1));
            incident[link.head].push((id, -1));
        }

        let mut plaquettes = Vec::new();
        for v in 0..n_vertices {
            let (x, y) = (v % lx, v / lx);
            let exists = match boundary {
                Boundary::Open => x + 1 < lx && y + 1 < ly,
                Boundary::Periodic => true,
            };
            if !exists {
                continue;
            }
            let right_v = match boundary {
                Boundary::Open => v + 1,
                Boundary::Periodic => y * lx + (x + 1) % lx,
            };
            let top_v = match boundary {
                Boundary::Open => v + lx,
                Boundary::Periodic => ((y + 1) % ly) * lx + x,
            };
            let bottom = link_from[v][0].expect("bottom link must exist");
            let right = link_from[right_v][1].expect("right link must exist");
            let top = link_from[top_v][0].expect("top link must exist");
            let left = link_from[v][1].expect("left link must exist");
            plaquettes.push(Plaquette {
                links: [bottom, right, top, left],
                base: v,
            });
        }

        let lattice = Lattice {
            lx,
            ly,
            boundary,
            links,
            plaquettes,
            link_from,
            incident,
        };
        lattice.check_closure()?;
        Ok(lattice)
    }

    /// Verifies that every plaquette's directed links close into a loop.
    fn check_closure(&self) -> Result<()> {
        for (i, p) in self.plaquettes.iter().enumerate() {
            let [b, r, t, l] = p.links;
            let mut at = p.base;
            // bottom and right forward, top and left backward
            for (id, forward) in [(b, true), (r, true), (t, false), (l, false)] {
                let link = self.links[id];
                let (from, to) = if forward {
                    (link.tail, link.head)
                } else {
                    (link.head, link.tail)
                };
                if from != at {
                    return Err(Error::invalid(format!(
                        "plaquette {i} does not close: expected to stand at {at}, link {id} starts at {from}"
                    )));
                }
                at = to;
            }
            if at != p.base {
                return Err(Error::invalid(format!(
                    "plaquette {i} walk ends at {at}, not its base {}",
                    p.base
                )));
            }
        }
        Ok(())
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn vertex_count(&self) -> usize {
        self.lx * self.ly
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn plaquette_count(&self) -> usize {
        self.plaquettes.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    /// Row-major vertex id for grid coordinates, wrapping under periodic
    /// boundaries. Errors on out-of-range coordinates for open boundaries.
    pub fn vertex_id(&self, x: usize, y: usize) -> Result<VertexId> {
        match self.boundary {
            Boundary::Open => {
                if x >= self.lx || y >= self.ly {
                    Err(Error::invalid(format!(
                        "vertex ({x},{y}) outside open {}×{} lattice",
                        self.lx, self.ly
                    )))
                } else {
                    Ok(y * self.lx + x)
                }
            }
            Boundary::Periodic => Ok((y % self.ly) * self.lx + (x % self.lx)),
        }
    }

    /// Grid coordinates of a vertex id.
    pub fn coords(&self, v: VertexId) -> (usize, usize) {
        (v % self.lx, v / self.lx)
    }

    /// Vertex parity `(x + y) mod 2` — the even/odd sublattice label.
    pub fn parity(&self, v: VertexId) -> u8 {
        let (x, y) = self.coords(v);
        ((x + y) % 2) as u8
    }

    /// The link leaving `v` in `dir`, if it exists (open boundaries drop it).
    pub fn link_from(&self, v: VertexId, dir: Direction) -> Option<LinkId> {
        let slot = match dir {
            Direction::X => 0,
            Direction::Y => 1,
        };
        self.link_from[v][slot]
    }

    /// Links touching `v` with divergence sign: +1 leaving, −1 entering.
    ///
    /// The order is deterministic (ascending link id for the leaving ones,
    /// then ascending for the entering ones as they were discovered).
    pub fn incident_links(&self, v: VertexId) -> Result<&[(LinkId, i8)]> {
        self.incident
            .get(v)
            .map(|list| list.as_slice())
            .ok_or_else(|| Error::invalid(format!("unknown vertex {v}")))
    }

    /// Manhattan distance between two vertices (open boundaries; the periodic
    /// variant takes the wrap-around shortcut into account).
    pub fn manhattan_distance(&self, a: VertexId, b: VertexId) -> usize {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let dx = ax.abs_diff(bx);
        let dy = ay.abs_diff(by);
        match self.boundary {
            Boundary::Open => dx + dy,
            Boundary::Periodic => dx.min(self.lx - dx) + dy.min(self.ly - dy),
        }
    }
}
