/// Bits moved during one communication round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundBits {
    pub round: usize,
    pub bits_up: u64,
    pub bits_down: u64,
}

/// Exact traffic accounting, per client and overall.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommLedger {
    up: Vec<u64>,
    down: Vec<u64>,
    total_up: u64,
    total_down: u64,
    open: RoundBits,
    rounds: Vec<RoundBits>,
}

impl CommLedger {
    pub fn new(num_clients: usize) -> Self {
        CommLedger {
            up: vec![0; num_clients],
            down: vec![0; num_clients],
            total_up: 0,
            total_down: 0,
            open: RoundBits::default(),
            rounds: Vec::new(),
        }
    }

    pub fn record_up(&mut self, client: usize, bits: usize) {
        self.up[client] += bits as u64;
        self.total_up += bits as u64;
        self.open.bits_up += bits as u64;
    }

    pub fn record_down(&mut self, client: usize, bits: usize) {
        self.down[client] += bits as u64;
        self.total_down += bits as u64;
        self.open.bits_down += bits as u64;
    }

    pub(crate) fn close_round(&mut self, round: usize) {
        self.open.round = round;
        self.rounds.push(self.open);
        self.open = RoundBits::default();
    }

    pub fn total_up(&self) -> u64 {
        self.total_up
    }

    pub fn total_down(&self) -> u64 {
        self.total_down
    }

    pub fn client_up(&self) -> &[u64] {
        &self.up
    }

    pub fn client_down(&self) -> &[u64] {
        &self.down
    }

    pub fn rounds(&self) -> &[RoundBits] {
        &self.rounds
    }

    /// Global totals equal the per-client sums and the per-round sums.
    pub fn is_consistent(&self) -> bool {
        let per_round_up: u64 = self.rounds.iter().map(|r| r.bits_up).sum::<u64>() + self.open.bits_up;
        let per_round_down: u64 = self.rounds.iter().map(|r| r.bits_down).sum::<u64>() + self.open.bits_down;
        self.up.iter().sum::<u64>() == self.total_up
            && self.down.iter().sum::<u64>() == self.total_down
            && per_round_up == self.total_up
            && per_round_down == self.total_down
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_add_up() {
        let mut l = CommLedger::new(3);
        l.record_up(0, 10);
        l.record_up(2, 5);
        l.record_down(1, 7);
        l.close_round(0);
        l.record_down(0, 1);
        assert_eq!(l.total_up(), 15);
        assert_eq!(l.total_down(), 8);
        assert_eq!(l.client_up(), &[10, 0, 5]);
        assert_eq!(l.rounds(), &[RoundBits { round: 0, bits_up: 15, bits_down: 7 }]);
        assert!(l.is_consistent());
    }
}
