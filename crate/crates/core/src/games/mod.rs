//! Worked example games: the two-agent multiple access broadcast game, a
//! generator/solver for games with uncontrolled dynamics and no private
//! values, and seeded random games.

pub mod game_m;
pub mod mac;
pub mod random;
