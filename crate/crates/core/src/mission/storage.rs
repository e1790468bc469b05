//! Redundant eMMC pair and the startup ladder.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::watchdog::Watchdog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmmcId {
    A,
    B,
}

impl EmmcId {
    pub fn as_str(self) -> &'static str {
        match self {
            EmmcId::A => "a",
            EmmcId::B => "b",
        }
    }

    pub fn other(self) -> Self {
        match self {
            EmmcId::A => EmmcId::B,
            EmmcId::B => EmmcId::A,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MountState {
    Unmounted,
    Mounted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmmcFault {
    #[default]
    None,
    MountFail,
    /// Latched-up controller: mounting times out and reformatting cannot
    /// reach the card.
    ControllerHang,
}

#[derive(Debug, Clone)]
pub struct EmmcDevice {
    pub id: EmmcId,
    pub mount_state: MountState,
    pub fault: EmmcFault,
    pub path: PathBuf,
}

impl EmmcDevice {
    /// Transmission folder of one boot: `<card>/tx/<generation>`.
    pub fn data_root(&self, generation: u32) -> PathBuf {
        self.tx_root().join(generation.to_string())
    }

    pub fn tx_root(&self) -> PathBuf {
        self.path.join("tx")
    }
}

#[derive(Debug, Clone)]
pub struct Storage {
    devices: [EmmcDevice; 2],
    /// Whether a reformat clears mount faults.
    pub reformat_works: bool,
}

impl Storage {
    /// Cards live at `<root>/emmc_a` and `<root>/emmc_b`.
    pub fn new(root: &Path) -> io::Result<Self> {
        let dev = |id: EmmcId| -> io::Result<EmmcDevice> {
            let path = root.join(format!("emmc_{}", id.as_str()));
            fs::create_dir_all(&path)?;
            Ok(EmmcDevice {
                id,
                mount_state: MountState::Unmounted,
                fault: EmmcFault::None,
                path,
            })
        };
        Ok(Self {
            devices: [dev(EmmcId::A)?, dev(EmmcId::B)?],
            reformat_works: true,
        })
    }

    pub fn device(&self, id: EmmcId) -> &EmmcDevice {
        &self.devices[id.index()]
    }

    pub fn set_fault(&mut self, id: EmmcId, fault: EmmcFault) {
        self.devices[id.index()].fault = fault;
    }

    pub fn mounted(&self) -> Option<&EmmcDevice> {
        self.devices.iter().find(|d| d.mount_state == MountState::Mounted)
    }

    pub fn unmount_all(&mut self) {
        for d in &mut self.devices {
            d.mount_state = MountState::Unmounted;
        }
    }

    pub fn mount(&mut self, id: EmmcId) -> bool {
        if self.mounted().is_some_and(|d| d.id != id) {
            return false;
        }
        let d = &mut self.devices[id.index()];
        let ok = d.fault == EmmcFault::None && fs::create_dir_all(d.tx_root()).is_ok();
        d.mount_state = if ok { MountState::Mounted } else { MountState::Failed };
        ok
    }

    /// Erase both cards. Clears mount faults when reformatting works.
    pub fn reformat_both(&mut self) -> bool {
        self.unmount_all();
        if !self.reformat_works || self.devices.iter().any(|d| d.fault == EmmcFault::ControllerHang) {
            return false;
        }
        for d in &mut self.devices {
            let _ = fs::remove_dir_all(&d.path);
            if fs::create_dir_all(&d.path).is_err() {
                return false;
            }
            d.fault = EmmcFault::None;
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step", content = "card")]
pub enum StartupStep {
    NetworksEnabled,
    WatchdogArmed,
    Picked(EmmcId),
    MountFailed(EmmcId),
    Fallback(EmmcId),
    Reformat { ok: bool },
    Mounted(EmmcId),
    Reboot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartupOutcome {
    Ready(EmmcId),
    Reboot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartupReport {
    pub steps: Vec<StartupStep>,
    pub first_pick: EmmcId,
    pub outcome: StartupOutcome,
}

/// Networks, watchdog, then a random card; the other card on failure;
/// reformat both; reboot as the last resort.
pub fn run_startup<R: Rng + ?Sized>(storage: &mut Storage, watchdog: &mut Watchdog, now: Duration, rng: &mut R) -> StartupReport {
    let mut steps = vec![StartupStep::NetworksEnabled];
    watchdog.arm(now);
    steps.push(StartupStep::WatchdogArmed);
    storage.unmount_all();
    let first = if rng.random_bool(0.5) { EmmcId::A } else { EmmcId::B };
    steps.push(StartupStep::Picked(first));
    let mut outcome = StartupOutcome::Reboot;
    if storage.mount(first) {
        outcome = StartupOutcome::Ready(first);
    } else {
        steps.push(StartupStep::MountFailed(first));
        let second = first.other();
        steps.push(StartupStep::Fallback(second));
        if storage.mount(second) {
            outcome = StartupOutcome::Ready(second);
        } else {
            steps.push(StartupStep::MountFailed(second));
            let ok = storage.reformat_both();
            steps.push(StartupStep::Reformat { ok });
            if ok && storage.mount(first) {
                outcome = StartupOutcome::Ready(first);
            }
        }
    }
    match outcome {
        StartupOutcome::Ready(id) => steps.push(StartupStep::Mounted(id)),
        StartupOutcome::Reboot => steps.push(StartupStep::Reboot),
    }
    StartupReport {
        steps,
        first_pick: first,
        outcome,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn boot(a: EmmcFault, b: EmmcFault, reformat: bool, seed: u64) -> (StartupReport, Storage) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Storage::new(dir.path()).unwrap();
        s.set_fault(EmmcId::A, a);
        s.set_fault(EmmcId::B, b);
        s.reformat_works = reformat;
        let mut wd = Watchdog::new(Duration::from_secs(5));
        let r = run_startup(&mut s, &mut wd, Duration::ZERO, &mut ChaCha8Rng::seed_from_u64(seed));
        assert!(wd.armed());
        (r, s)
    }

    #[test]
    fn order_of_steps() {
        let (r, s) = boot(EmmcFault::None, EmmcFault::None, true, 1);
        assert_eq!(r.steps[..2], [StartupStep::NetworksEnabled, StartupStep::WatchdogArmed]);
        assert_eq!(r.outcome, StartupOutcome::Ready(r.first_pick));
        assert_eq!(s.mounted().unwrap().id, r.first_pick);
    }

    #[test]
    fn fallback_to_other_card() {
        for seed in 0..20 {
            let (r, _) = boot(EmmcFault::MountFail, EmmcFault::None, false, seed);
            assert_eq!(r.outcome, StartupOutcome::Ready(EmmcId::B));
            if r.first_pick == EmmcId::A {
                assert!(r.steps.contains(&StartupStep::Fallback(EmmcId::B)));
            }
        }
    }

    #[test]
    fn exhaustive_fault_matrix() {
        for a in [false, true] {
            for b in [false, true] {
                for reformat in [false, true] {
                    let f = |x| if x { EmmcFault::MountFail } else { EmmcFault::None };
                    let (r, s) = boot(f(a), f(b), reformat, 3);
                    let expect_ready = !(a && b) || reformat;
                    match r.outcome {
                        StartupOutcome::Ready(id) => {
                            assert!(expect_ready);
                            assert_eq!(s.mounted().unwrap().id, id);
                        }
                        StartupOutcome::Reboot => {
                            assert!(!expect_ready);
                            assert!(s.mounted().is_none());
                            assert_eq!(r.steps.last(), Some(&StartupStep::Reboot));
                        }
                    }
                    assert_eq!(r.steps.contains(&StartupStep::Reformat { ok: reformat }), a && b);
                }
            }
        }
    }

    #[test]
    fn hang_is_not_cured_by_reformat() {
        let (r, _) = boot(EmmcFault::ControllerHang, EmmcFault::MountFail, true, 0);
        assert_eq!(r.outcome, StartupOutcome::Reboot);
    }

    #[test]
    fn data_roots_differ_per_generation() {
        let (_, s) = boot(EmmcFault::None, EmmcFault::None, true, 0);
        let d = s.mounted().unwrap();
        assert_ne!(d.data_root(1), d.data_root(3));
        assert!(d.data_root(3).starts_with(d.tx_root()));
    }
}
