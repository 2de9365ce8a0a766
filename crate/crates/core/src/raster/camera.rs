use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera, OpenCV convention (+x right, +y down, +z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub camera_to_world: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(camera_to_world: Matrix4<f64>, fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Camera { camera_to_world, fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("zero-sized image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Camera(format!("principal point ({}, {}) outside the image", self.cx, self.cy)));
        }
        if self.camera_to_world.iter().any(|v| !v.is_finite()) {
            return Err(Error::Camera("non-finite pose".into()));
        }
        let r = self.rotation_c2w();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Camera(format!("rotation block not orthonormal (error {err:.2e})")));
        }
        if r.determinant() < 0.0 {
            return Err(Error::Camera("rotation block is a reflection".into()));
        }
        let last = self.camera_to_world.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::Camera("last row of the pose must be (0, 0, 0, 1)".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: usize, height: usize) -> Result<Self> {
        let eye = Vector3::from(eye);
        let f = Vector3::from(target) - eye;
        if f.norm() < 1e-12 {
            return Err(Error::Camera("eye and target coincide".into()));
        }
        let f = f.normalize();
        let right = f.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::Camera("up vector parallel to the viewing direction".into()));
        }
        let right = right.normalize();
        let down = f.cross(&right);
        let mut c2w = Matrix4::identity();
        for k in 0..3 {
            c2w[(k, 0)] = right[k];
            c2w[(k, 1)] = down[k];
            c2w[(k, 2)] = f[k];
            c2w[(k, 3)] = eye[k];
        }
        Camera::new(c2w, focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn rotation_c2w(&self) -> Matrix3<f64> {
        self.camera_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// World-to-camera rotation `W`.
    pub fn rotation_w2c(&self) -> Matrix3<f64> {
        self.rotation_c2w().transpose()
    }

    /// Camera center `o` in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.camera_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_w2c() * (p - self.center())
    }

    /// Unit-length ray direction through pixel coordinates `(x, y)` in world space.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let d = Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0);
        (self.rotation_c2w() * d).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same pose and field of view at a different resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera::new(self.camera_to_world, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)
    }
}
