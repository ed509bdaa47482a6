use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or mutually inconsistent inputs (dimension mismatches,
    /// out-of-range indices, invalid permutations).
    #[error("invalid input: {0}")]
    Input(String),

    /// An exhaustive oracle was asked to enumerate a market that is too big.
    #[error(
        "market of {n_players} players and {n_arms} arms exceeds the enumeration limit of {limit}"
    )]
    Capacity {
        n_players: usize,
        n_arms: usize,
        limit: usize,
    },

    /// The mean-reward timeline breaks the boundedness / strict-gap assumption.
    #[error("assumption violated for player {player} in segment {segment}: {detail}")]
    Assumption {
        player: usize,
        segment: usize,
        detail: String,
    },

    /// Instance generator parameters that cannot be satisfied.
    #[error("infeasible generator spec: {0}")]
    Infeasible(String),

    #[error("config error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
