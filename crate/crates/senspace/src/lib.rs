pub mod conv;
pub mod cutoff;
pub mod error;
pub mod fields3d;
pub mod ode;
pub mod quad;
pub mod fd;
pub mod gauge;
pub mod forms;
pub mod triples;
pub mod atiyah_hitchin;
pub mod ellipse;
pub mod blowup_atlas;
pub mod gluing;
pub mod adiabatic_solver;
pub mod perturb;
pub mod io;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/potentials.md")]
    mod potentials {}
    #[doc = include_str!("../../../book/src/connections.md")]
    mod connections {}
    #[doc = include_str!("../../../book/src/triples.md")]
    mod triples {}
    #[doc = include_str!("../../../book/src/atiyah_hitchin.md")]
    mod atiyah_hitchin {}
    #[doc = include_str!("../../../book/src/ellipses.md")]
    mod ellipses {}
    #[doc = include_str!("../../../book/src/blowup.md")]
    mod blowup {}
    #[doc = include_str!("../../../book/src/gluing.md")]
    mod gluing {}
    #[doc = include_str!("../../../book/src/adiabatic.md")]
    mod adiabatic {}
    #[doc = include_str!("../../../book/src/perturb.md")]
    mod perturb {}
}
