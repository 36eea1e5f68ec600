//! Three-tier IoT / fog / cloud topology and the offloading action space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Iot,
    Fog,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub tier: Tier,
    /// Work units per second.
    pub capacity: f64,
    /// Watts drawn while executing a job.
    pub busy_power: f64,
    pub idle_power: f64,
    #[serde(default)]
    pub compromised: bool,
}

impl NodeSpec {
    pub fn new(id: &str, tier: Tier, capacity: f64, busy_power: f64, idle_power: f64) -> Self {
        Self {
            id: id.to_string(),
            tier,
            capacity,
            busy_power,
            idle_power,
            compromised: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    /// Work units per second.
    pub bandwidth: f64,
    /// Seconds.
    pub propagation: f64,
    /// Watts drawn by the sending device while transmitting.
    pub tx_power: f64,
}

impl LinkSpec {
    pub fn new(from: &str, to: &str, bandwidth: f64, propagation: f64, tx_power: f64) -> Self {
        Self {
            from: from.to_string(),
            to: to.to_string(),
            bandwidth,
            propagation,
            tx_power,
        }
    }
}

/// Link parameters applied to every device→tier pair not listed explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTemplate {
    pub bandwidth: f64,
    pub propagation: f64,
    pub tx_power: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultLinks {
    pub fog: Option<LinkTemplate>,
    pub cloud: Option<LinkTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub default_links: DefaultLinks,
}

/// Where a job runs: on its source device, on a fog node, or in the cloud.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OffloadTarget {
    Local,
    Fog(String),
    Cloud,
}

impl fmt::Display for OffloadTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffloadTarget::Local => write!(f, "local"),
            OffloadTarget::Fog(id) => write!(f, "fog:{id}"),
            OffloadTarget::Cloud => write!(f, "cloud"),
        }
    }
}

/// Validated, immutable topology.
///
/// Nodes are stored as `[iot..., fog..., cloud]`, each tier sorted by id, so
/// node indices and action indices do not depend on declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    n_iot: usize,
    n_fog: usize,
    // links[device * (n_fog + 1) + j]: j < n_fog is fog j, j == n_fog the cloud
    links: Vec<LinkSpec>,
    index: BTreeMap<String, usize>,
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology, TopologyError> {
    let mut errs = Vec::new();

    let mut seen = BTreeSet::new();
    for n in &config.nodes {
        if !seen.insert(n.id.as_str()) {
            errs.push(format!("duplicate node id `{}`", n.id));
        }
        if !(n.capacity > 0.0 && n.capacity.is_finite()) {
            errs.push(format!("node `{}`: capacity must be finite and > 0", n.id));
        }
        if !(n.busy_power >= 0.0) || !(n.idle_power >= 0.0) {
            errs.push(format!("node `{}`: power must be >= 0", n.id));
        }
        if n.compromised && n.tier != Tier::Fog {
            errs.push(format!("node `{}`: only fog nodes can be compromised", n.id));
        }
    }

    let by_tier = |t: Tier| -> Vec<&NodeSpec> {
        let mut v: Vec<&NodeSpec> = config.nodes.iter().filter(|n| n.tier == t).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let iot = by_tier(Tier::Iot);
    let fog = by_tier(Tier::Fog);
    let cloud = by_tier(Tier::Cloud);
    if iot.is_empty() {
        errs.push("at least one iot node is required".into());
    }
    if fog.is_empty() {
        errs.push("at least one fog node is required".into());
    }
    if cloud.len() != 1 {
        errs.push(format!("exactly one cloud node is required (got {})", cloud.len()));
    }
    if let Some(c) = cloud.first() {
        if let Some(f) = fog.iter().find(|f| f.capacity > c.capacity) {
            errs.push(format!(
                "cloud `{}` capacity {} is below fog `{}` capacity {}",
                c.id, c.capacity, f.id, f.capacity
            ));
        }
    }

    let mut explicit: BTreeMap<(&str, &str), &LinkSpec> = BTreeMap::new();
    let tier_of: BTreeMap<&str, Tier> = config.nodes.iter().map(|n| (n.id.as_str(), n.tier)).collect();
    for l in &config.links {
        match (tier_of.get(l.from.as_str()), tier_of.get(l.to.as_str())) {
            (Some(Tier::Iot), Some(Tier::Fog | Tier::Cloud)) => {}
            (None, _) | (_, None) => {
                errs.push(format!("link {}->{}: unknown endpoint", l.from, l.to));
                continue;
            }
            _ => {
                errs.push(format!("link {}->{}: only iot->fog and iot->cloud links are allowed", l.from, l.to));
                continue;
            }
        }
        if explicit.insert((l.from.as_str(), l.to.as_str()), l).is_some() {
            errs.push(format!("duplicate link {}->{}", l.from, l.to));
        }
        if !(l.bandwidth > 0.0 && l.bandwidth.is_finite()) {
            errs.push(format!("link {}->{}: bandwidth must be finite and > 0", l.from, l.to));
        }
        if !(l.propagation >= 0.0) || !(l.tx_power >= 0.0) {
            errs.push(format!("link {}->{}: propagation and tx_power must be >= 0", l.from, l.to));
        }
    }
    for (name, t) in [("fog", &config.default_links.fog), ("cloud", &config.default_links.cloud)] {
        if let Some(t) = t {
            if !(t.bandwidth > 0.0 && t.bandwidth.is_finite()) || !(t.propagation >= 0.0) || !(t.tx_power >= 0.0) {
                errs.push(format!("default {name} link: bandwidth must be > 0, propagation and tx_power >= 0"));
            }
        }
    }

    let targets: Vec<&NodeSpec> = fog.iter().chain(cloud.iter().take(1)).copied().collect();
    let mut links = Vec::with_capacity(iot.len() * targets.len());
    for d in &iot {
        for t in &targets {
            let template = if t.tier == Tier::Fog {
                &config.default_links.fog
            } else {
                &config.default_links.cloud
            };
            match (explicit.get(&(d.id.as_str(), t.id.as_str())), template) {
                (Some(l), _) => links.push((*l).clone()),
                (None, Some(tpl)) => links.push(LinkSpec::new(&d.id, &t.id, tpl.bandwidth, tpl.propagation, tpl.tx_power)),
                (None, None) => errs.push(format!("missing link {}->{}", d.id, t.id)),
            }
        }
    }

    if errs.is_empty() {
        let stride = targets.len();
        for (di, d) in iot.iter().enumerate() {
            let row = &links[di * stride..(di + 1) * stride];
            let fog_max = row[..stride - 1].iter().map(|l| l.propagation).fold(f64::MIN, f64::max);
            let cloud_prop = row[stride - 1].propagation;
            if fog_max >= cloud_prop {
                errs.push(format!(
                    "device `{}`: fog propagation {fog_max} must be below cloud propagation {cloud_prop}",
                    d.id
                ));
            }
        }
    }

    if !errs.is_empty() {
        return Err(TopologyError::Invalid(errs));
    }

    let nodes: Vec<NodeSpec> = iot
        .iter()
        .chain(fog.iter())
        .chain(cloud.iter())
        .map(|n| (*n).clone())
        .collect();
    let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    Ok(Topology {
        n_iot: iot.len(),
        n_fog: fog.len(),
        nodes,
        links,
        index,
    })
}

impl Topology {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &NodeSpec {
        &self.nodes[idx]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn fog_count(&self) -> usize {
        self.n_fog
    }

    pub fn iot_count(&self) -> usize {
        self.n_iot
    }

    /// Node index of the `k`-th fog node in id order.
    pub fn fog_index(&self, k: usize) -> usize {
        self.n_iot + k
    }

    pub fn cloud_index(&self) -> usize {
        self.n_iot + self.n_fog
    }

    pub fn fog_nodes(&self) -> &[NodeSpec] {
        &self.nodes[self.n_iot..self.n_iot + self.n_fog]
    }

    pub fn cloud(&self) -> &NodeSpec {
        &self.nodes[self.cloud_index()]
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    /// `N_fog + 2`: local, each fog node, cloud.
    pub fn action_count(&self) -> usize {
        self.n_fog + 2
    }

    /// Index of an IoT device node, or `UnknownDevice`.
    pub fn device_index(&self, device_id: &str) -> Result<usize, TopologyError> {
        match self.node_index(device_id) {
            Some(i) if i < self.n_iot => Ok(i),
            _ => Err(TopologyError::UnknownDevice(device_id.to_string())),
        }
    }

    /// Ordered offload targets for `device_id`: `[Local, Fog 1..N, Cloud]`.
    /// The position in this list is the action integer.
    pub fn action_space(&self, device_id: &str) -> Result<Vec<OffloadTarget>, TopologyError> {
        self.device_index(device_id)?;
        let mut out = Vec::with_capacity(self.action_count());
        out.push(OffloadTarget::Local);
        out.extend(self.fog_nodes().iter().map(|f| OffloadTarget::Fog(f.id.clone())));
        out.push(OffloadTarget::Cloud);
        Ok(out)
    }

    pub fn target(&self, action: usize) -> OffloadTarget {
        match action {
            0 => OffloadTarget::Local,
            a if a <= self.n_fog => OffloadTarget::Fog(self.nodes[self.n_iot + a - 1].id.clone()),
            _ => OffloadTarget::Cloud,
        }
    }

    /// Node executing `action` for a job released by device `device`.
    pub fn target_node(&self, device: usize, action: usize) -> usize {
        debug_assert!(device < self.n_iot && action < self.action_count());
        if action == 0 {
            device
        } else {
            self.n_iot + action - 1
        }
    }

    /// Link used by `action` from `device`; `None` for local execution.
    pub fn link(&self, device: usize, action: usize) -> Option<&LinkSpec> {
        if action == 0 {
            None
        } else {
            Some(&self.links[device * (self.n_fog + 1) + action - 1])
        }
    }

    pub fn is_compromised(&self, idx: usize) -> bool {
        self.nodes[idx].compromised
    }

    /// Copy of this topology with exactly the given fog nodes compromised.
    pub fn with_compromised(&self, ids: &BTreeSet<String>) -> Result<Topology, TopologyError> {
        let mut errs = Vec::new();
        for id in ids {
            match self.node_index(id) {
                Some(i) if self.nodes[i].tier == Tier::Fog => {}
                Some(_) => errs.push(format!("node `{id}`: only fog nodes can be compromised")),
                None => errs.push(format!("unknown node `{id}`")),
            }
        }
        if !errs.is_empty() {
            return Err(TopologyError::Invalid(errs));
        }
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.compromised = ids.contains(&n.id);
        }
        Ok(out)
    }
}
