//! Backward induction over common-information states.

pub mod bundle;
pub mod grid;
mod induct;
mod io;
pub mod layer;
mod refine;
pub mod tree;

pub use bundle::{spec_fingerprint, CellCertificate, EquilibriumBundle, Layer};
pub use grid::{GridLayout, HatMode, Interpolation, SimplexGrid, StencilScratch};
pub(crate) use induct::sweep;
pub use induct::{backward_induct, enumerate_bundle, grid_layouts, make_belief_grid, signaling_free_next, signaling_free_tree};
pub use io::{load_bundle, save_bundle};
pub use layer::{value_eval, Layout, ValueTable};
pub use refine::{compare_resolutions, refinement_curve, RefinementStep};
pub use tree::TreeLayout;
