use std::io::Write;

/// Timestamps of one vehicle's pass through one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TravelRecord {
    pub vehicle_id: u64,
    /// Lane index within the intersection.
    pub lane: usize,
    pub entry_time_s: u64,
    /// Time the vehicle reaches the stop line: entry + free-flow time.
    pub ready_time_s: u64,
    pub depart_time_s: Option<u64>,
}

impl TravelRecord {
    /// Waiting indicator e_{t,i}: queued at the stop line at time `t`.
    pub fn waiting_at(&self, t: u64) -> bool {
        match self.depart_time_s {
            Some(d) => self.ready_time_s <= t && t < d,
            None => self.ready_time_s <= t,
        }
    }

    /// Delay D_i: number of waiting steps, for departed vehicles.
    pub fn delay_s(&self) -> Option<u64> {
        self.depart_time_s.map(|d| d - self.ready_time_s)
    }

    pub fn travel_time_s(&self) -> Option<u64> {
        self.depart_time_s.map(|d| d - self.entry_time_s)
    }
}

/// Per-intersection record of every vehicle that entered an approach lane.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelLog {
    pub records: Vec<TravelRecord>,
    pub road_length_m: f64,
    pub free_flow_speed_mps: f64,
    /// l/μ in whole steps.
    pub free_flow_s: u64,
}

impl TravelLog {
    pub fn new(road_length_m: f64, free_flow_speed_mps: f64, free_flow_s: u64) -> Self {
        TravelLog {
            records: Vec::new(),
            road_length_m,
            free_flow_speed_mps,
            free_flow_s,
        }
    }

    pub fn departed(&self) -> impl Iterator<Item = &TravelRecord> {
        self.records.iter().filter(|r| r.depart_time_s.is_some())
    }

    pub fn pending_count(&self) -> usize {
        self.records.iter().filter(|r| r.depart_time_s.is_none()).count()
    }
}

/// One simulated second at one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub phase: usize,
    pub reward: f64,
    pub queues: Vec<u32>,
}

impl TraceRow {
    pub fn queue_sum(&self) -> u64 {
        self.queues.iter().map(|&q| q as u64).sum()
    }
}

/// Reward and per-lane queue trace of one intersection over an episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTrace {
    pub rows: Vec<TraceRow>,
}

impl RewardTrace {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.reward)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards().sum()
    }

    /// Writes `t,phase,reward,q_lane0,...` with a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lanes = self.rows.first().map(|r| r.queues.len()).unwrap_or(0);
        write!(out, "t,phase,reward")?;
        for j in 0..lanes {
            write!(out, ",q_lane{j}")?;
        }
        writeln!(out)?;
        for row in &self.rows {
            write!(out, "{},{},{}", row.t, row.phase, row.reward)?;
            for q in &row.queues {
                write!(out, ",{q}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waiting_window_is_half_open() {
        let r = TravelRecord {
            vehicle_id: 1,
            lane: 0,
            entry_time_s: 0,
            ready_time_s: 30,
            depart_time_s: Some(33),
        };
        let waits: Vec<u64> = (0..40).filter(|&t| r.waiting_at(t)).collect();
        assert_eq!(waits, [30, 31, 32]);
        assert_eq!(r.delay_s(), Some(3));
        assert_eq!(r.travel_time_s(), Some(33));
    }

    #[test]
    fn trace_csv_layout() {
        let trace = RewardTrace {
            rows: vec![TraceRow {
                t: 0,
                phase: 1,
                reward: -3.0,
                queues: vec![1, 2],
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,phase,reward,q_lane0,q_lane1\n0,1,-3,1,2\n"
        );
    }
}
