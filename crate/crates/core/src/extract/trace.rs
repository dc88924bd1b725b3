use rayon::prelude::*;

use super::ExtractError;
use crate::data::Vec3;
use crate::fields::SdfField;

/// Rays evaluated per parallel work item.
const BATCH: usize = 1024;
/// Newton iterations after the march has converged.
const REFINE_STEPS: usize = 8;
/// Largest Newton correction, in units of `hit_eps`.
const REFINE_REACH: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    pub max_steps: usize,
    pub hit_eps: f64,
    /// Fraction of the signed distance advanced per step.
    pub damping: f64,
    /// Largest ray parameter considered.
    pub t_max: f64,
    /// Polish converged hits with Newton steps along the ray. A step is kept
    /// only when it lowers `|d|` and leaves `d <= hit_eps`.
    pub refine: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            max_steps: 256,
            hit_eps: 1e-4,
            damping: 0.9,
            t_max: f64::INFINITY,
            refine: true,
        }
    }
}

impl TraceOptions {
    fn validate(&self) -> Result<(), ExtractError> {
        if !(self.hit_eps > 0.0) {
            return Err(ExtractError::Invalid(format!(
                "hit_eps must be positive, got {}",
                self.hit_eps
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ExtractError::Invalid(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_steps == 0 {
            return Err(ExtractError::Invalid("max_steps must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(ExtractError::Invalid(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceHit {
    /// Ray parameter of the hit.
    pub t: f64,
    pub point: Vec3,
    /// Signed distance at the hit, at most `hit_eps`.
    pub distance: f64,
    /// Marching steps taken.
    pub steps: usize,
}

fn distances(field: &dyn SdfField, points: &[Vec3]) -> Vec<f64> {
    if points.len() <= BATCH {
        return field.distances(points);
    }
    points
        .par_chunks(BATCH)
        .map(|c| field.distances(c))
        .collect::<Vec<_>>()
        .concat()
}

struct Ray {
    origin: Vec3,
    dir: Vec3,
    t_max: f64,
    t: f64,
    d: f64,
    steps: usize,
}

impl Ray {
    fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Sphere-trace every ray `(origin, unit direction)` through `field`.
pub fn sphere_trace_many(
    field: &dyn SdfField,
    rays: &[(Vec3, Vec3)],
    opts: &TraceOptions,
) -> Result<Vec<Option<TraceHit>>, ExtractError> {
    let limited: Vec<_> = rays.iter().map(|&(o, d)| (o, d, opts.t_max)).collect();
    trace_limited(field, &limited, opts)
}

/// Like [`sphere_trace_many`] with a per-ray `t_max` (capped by the
/// option's).
pub(crate) fn trace_limited(
    field: &dyn SdfField,
    rays: &[(Vec3, Vec3, f64)],
    opts: &TraceOptions,
) -> Result<Vec<Option<TraceHit>>, ExtractError> {
    opts.validate()?;
    for (i, (_, d, _)) in rays.iter().enumerate() {
        if (d.norm() - 1.0).abs() > 1e-6 {
            return Err(ExtractError::NotUnit {
                index: i,
                norm: d.norm(),
            });
        }
    }
    let mut state: Vec<Ray> = rays
        .iter()
        .map(|&(o, d, t_max)| Ray {
            origin: o,
            dir: d,
            t_max: t_max.min(opts.t_max),
            t: 0.0,
            d: f64::INFINITY,
            steps: 0,
        })
        .collect();
    let mut out: Vec<Option<TraceHit>> = vec![None; rays.len()];
    let mut active: Vec<usize> = (0..rays.len()).collect();
    let mut converged = Vec::new();
    while !active.is_empty() {
        let pts: Vec<Vec3> = active.iter().map(|&i| state[i].at(state[i].t)).collect();
        let d = distances(field, &pts);
        let mut next = Vec::with_capacity(active.len());
        for (&i, &di) in active.iter().zip(&d) {
            let r = &mut state[i];
            r.d = di;
            if !di.is_finite() {
                continue;
            }
            if di <= opts.hit_eps {
                converged.push(i);
                continue;
            }
            if r.steps == opts.max_steps {
                continue;
            }
            r.t += opts.damping * di;
            r.steps += 1;
            if r.t <= r.t_max {
                next.push(i);
            }
        }
        active = next;
    }
    if opts.refine {
        refine(field, &mut state, &converged, opts);
    }
    for &i in &converged {
        let r = &state[i];
        out[i] = Some(TraceHit {
            t: r.t,
            point: r.at(r.t),
            distance: r.d,
            steps: r.steps,
        });
    }
    Ok(out)
}

fn refine(field: &dyn SdfField, state: &mut [Ray], hits: &[usize], opts: &TraceOptions) {
    let h = opts.hit_eps;
    let mut active: Vec<usize> = hits.to_vec();
    for _ in 0..REFINE_STEPS {
        if active.is_empty() {
            break;
        }
        let probes: Vec<Vec3> = active
            .iter()
            .flat_map(|&i| [state[i].at(state[i].t + h), state[i].at(state[i].t - h)])
            .collect();
        let d = distances(field, &probes);
        let mut moved = Vec::with_capacity(active.len());
        let mut cand = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let r = &state[i];
            let slope = (d[2 * k] - d[2 * k + 1]) / (2.0 * h);
            if !(slope.abs() > 1e-6) || r.d == 0.0 {
                continue;
            }
            let dt = -r.d / slope;
            let t = r.t + dt;
            if dt.abs() <= REFINE_REACH * h && t >= 0.0 && t <= r.t_max {
                moved.push(i);
                cand.push(t);
            }
        }
        let pts: Vec<Vec3> = moved.iter().zip(&cand).map(|(&i, &t)| state[i].at(t)).collect();
        let d = distances(field, &pts);
        active.clear();
        for ((&i, &t), &dn) in moved.iter().zip(&cand).zip(&d) {
            let r = &mut state[i];
            if dn.is_finite() && dn.abs() < r.d.abs() && dn <= opts.hit_eps {
                r.t = t;
                r.d = dn;
                active.push(i);
            }
        }
    }
}

/// Sphere-trace a single ray; `None` is a miss.
pub fn sphere_trace(
    field: &dyn SdfField,
    origin: &Vec3,
    dir: &Vec3,
    opts: &TraceOptions,
) -> Result<Option<TraceHit>, ExtractError> {
    Ok(sphere_trace_many(field, &[(*origin, *dir)], opts)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sphere(p: &Vec3) -> f64 {
        p.norm() - 1.0
    }

    #[test]
    fn hits_pole() {
        let h = sphere_trace(
            &unit_sphere,
            &Vec3::new(0.0, 0.0, 3.0),
            &-Vec3::z(),
            &TraceOptions::default(),
        )
        .unwrap()
        .unwrap();
        assert!((h.point - Vec3::z()).norm() < 1e-4);
        assert!(h.distance <= 1e-4);
    }

    #[test]
    fn misses() {
        let h = sphere_trace(
            &unit_sphere,
            &Vec3::new(0.0, 2.0, 3.0),
            &-Vec3::z(),
            &TraceOptions::default(),
        )
        .unwrap();
        assert!(h.is_none());
    }

    #[test]
    fn rejects_non_unit_direction() {
        let e = sphere_trace(
            &unit_sphere,
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.0, 2.0),
            &TraceOptions::default(),
        );
        assert!(matches!(e, Err(ExtractError::NotUnit { .. })));
    }

    #[test]
    fn grazing_ray_refines_to_intersection() {
        let o = Vec3::new(0.999, 0.0, 3.0);
        let t_true = 3.0 - (1.0f64 - 0.999 * 0.999).sqrt();
        let plain = TraceOptions {
            refine: false,
            ..Default::default()
        };
        let coarse = sphere_trace(&unit_sphere, &o, &-Vec3::z(), &plain).unwrap().unwrap();
        let fine = sphere_trace(&unit_sphere, &o, &-Vec3::z(), &TraceOptions::default())
            .unwrap()
            .unwrap();
        assert!((fine.t - t_true).abs() < 1e-9);
        assert!((fine.t - t_true).abs() <= (coarse.t - t_true).abs());
    }

    #[test]
    fn respects_t_max() {
        let opts = TraceOptions {
            t_max: 1.5,
            ..Default::default()
        };
        assert!(
            sphere_trace(&unit_sphere, &Vec3::new(0.0, 0.0, 3.0), &-Vec3::z(), &opts)
                .unwrap()
                .is_none()
        );
    }
}
