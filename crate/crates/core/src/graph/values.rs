use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::nav::NavState;
use crate::preint::{so3_exp, so3_log, ImuBias, Rotation};

/// Kinds are ordered as they appear in the elimination order within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Pose,
    Velocity,
    Bias,
    Clock,
}

impl VarKind {
    pub fn dim(self) -> usize {
        match self {
            VarKind::Pose => 6,
            VarKind::Velocity => 3,
            VarKind::Bias => 6,
            VarKind::Clock => 1,
        }
    }
}

/// Ordered by epoch first, then kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableKey {
    pub epoch: usize,
    pub kind: VarKind,
}

impl VariableKey {
    pub fn pose(epoch: usize) -> Self {
        Self { epoch, kind: VarKind::Pose }
    }
    pub fn velocity(epoch: usize) -> Self {
        Self { epoch, kind: VarKind::Velocity }
    }
    pub fn bias(epoch: usize) -> Self {
        Self { epoch, kind: VarKind::Bias }
    }
    pub fn clock(epoch: usize) -> Self {
        Self { epoch, kind: VarKind::Clock }
    }
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// Value of one variable. Pose tangent is `(δθ, δp)` with the rotation
/// perturbed on the right; all other kinds are vector spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Pose {
        orientation: Rotation,
        position: Vector3<f64>,
    },
    Velocity(Vector3<f64>),
    Bias(ImuBias),
    Clock(f64),
}

impl Value {
    pub fn kind(&self) -> VarKind {
        match self {
            Value::Pose { .. } => VarKind::Pose,
            Value::Velocity(_) => VarKind::Velocity,
            Value::Bias(_) => VarKind::Bias,
            Value::Clock(_) => VarKind::Clock,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim()
    }

    /// `self ⊕ delta`; `delta.len()` must equal `self.dim()`.
    pub fn retract(&self, delta: &[f64]) -> Value {
        let v3 = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        match self {
            Value::Pose {
                orientation,
                position,
            } => Value::Pose {
                orientation: *orientation * so3_exp(&v3(0)),
                position: position + v3(3),
            },
            Value::Velocity(v) => Value::Velocity(v + v3(0)),
            Value::Bias(b) => Value::Bias(ImuBias {
                accel: b.accel + v3(0),
                gyro: b.gyro + v3(3),
            }),
            Value::Clock(c) => Value::Clock(c + delta[0]),
        }
    }

    /// Tangent vector taking `base` to `self`, i.e. `self ⊖ base`.
    pub fn local(&self, base: &Value) -> Result<DVector<f64>> {
        Ok(match (self, base) {
            (
                Value::Pose {
                    orientation,
                    position,
                },
                Value::Pose {
                    orientation: o0,
                    position: p0,
                },
            ) => {
                let th = so3_log(&(o0.inverse() * orientation));
                let dp = position - p0;
                DVector::from_column_slice(&[th.x, th.y, th.z, dp.x, dp.y, dp.z])
            }
            (Value::Velocity(v), Value::Velocity(v0)) => DVector::from_column_slice((v - v0).as_slice()),
            (Value::Bias(b), Value::Bias(b0)) => {
                DVector::from_column_slice((b.to_vector() - b0.to_vector()).as_slice())
            }
            (Value::Clock(c), Value::Clock(c0)) => DVector::from_element(1, c - c0),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "kind mismatch: {:?} vs {:?}",
                    self.kind(),
                    base.kind()
                )))
            }
        })
    }
}

/// Current estimate for every variable, keyed and ordered by [`VariableKey`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Values {
    map: BTreeMap<VariableKey, Value>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, value: Value) -> Result<()> {
        if key.kind != value.kind() {
            return Err(Error::InvalidParameter(format!(
                "value kind {:?} does not match key {:?}",
                value.kind(),
                key
            )));
        }
        self.map.insert(key, value);
        Ok(())
    }

    pub fn insert_nav(&mut self, epoch: usize, s: &NavState) {
        self.map.insert(
            VariableKey::pose(epoch),
            Value::Pose {
                orientation: s.orientation,
                position: s.position,
            },
        );
        self.map.insert(VariableKey::velocity(epoch), Value::Velocity(s.velocity));
    }

    pub fn insert_bias(&mut self, epoch: usize, b: &ImuBias) {
        self.map.insert(VariableKey::bias(epoch), Value::Bias(*b));
    }

    pub fn insert_clock(&mut self, epoch: usize, c: f64) {
        self.map.insert(VariableKey::clock(epoch), Value::Clock(c));
    }

    pub fn get(&self, key: &VariableKey) -> Result<&Value> {
        self.map.get(key).ok_or(Error::UnknownVariable(*key))
    }

    pub fn contains(&self, key: &VariableKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn remove(&mut self, key: &VariableKey) -> Option<Value> {
        self.map.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &Value)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn pose(&self, epoch: usize) -> Result<(Rotation, Vector3<f64>)> {
        match self.get(&VariableKey::pose(epoch))? {
            Value::Pose {
                orientation,
                position,
            } => Ok((*orientation, *position)),
            _ => unreachable!("kind checked on insert"),
        }
    }

    pub fn velocity(&self, epoch: usize) -> Result<Vector3<f64>> {
        match self.get(&VariableKey::velocity(epoch))? {
            Value::Velocity(v) => Ok(*v),
            _ => unreachable!("kind checked on insert"),
        }
    }

    pub fn bias(&self, epoch: usize) -> Result<ImuBias> {
        match self.get(&VariableKey::bias(epoch))? {
            Value::Bias(b) => Ok(*b),
            _ => unreachable!("kind checked on insert"),
        }
    }

    pub fn clock(&self, epoch: usize) -> Result<f64> {
        match self.get(&VariableKey::clock(epoch))? {
            Value::Clock(c) => Ok(*c),
            _ => unreachable!("kind checked on insert"),
        }
    }

    pub fn nav_state(&self, epoch: usize) -> Result<NavState> {
        let (orientation, position) = self.pose(epoch)?;
        Ok(NavState {
            position,
            velocity: self.velocity(epoch)?,
            orientation,
        })
    }
}
