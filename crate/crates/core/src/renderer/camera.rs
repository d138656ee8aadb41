use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    a.map(|v| v / n)
}

/// A ray with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|d| self.origin[d] + t * self.dir[d])
    }
}

/// Pinhole camera. Camera space is +x right, +y down, +z forward; pixel
/// `(u, v)` has its center at image coordinate `(u, v)`, so the principal
/// point of a `w×h` image is usually `((w−1)/2, (h−1)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rigid transform.
    pub c2w: Mat4,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, c2w: Mat4, near: f64, far: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            c2w,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("renderer", format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::invalid("renderer", format!("need 0 < near < far, got {} {}", self.near, self.far)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("renderer", "empty image size"));
        }
        let dev = rigidity_error(&self.c2w);
        if !(dev < 1e-6) {
            return Err(Error::invalid("renderer", format!("camera rotation is not orthonormal (‖RᵀR − I‖∞ = {dev:e})")));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_x: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let z = normalize(sub(target, eye));
        let x = normalize(cross(z, up));
        let y = cross(z, x);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("renderer", "look-at direction parallel to up vector"));
        }
        let c2w = [
            [x[0], y[0], z[0], eye[0]],
            [x[1], y[1], z[1], eye[1]],
            [x[2], y[2], z[2], eye[2]],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            c2w,
            near,
            far,
        )
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    /// Camera forward axis in world space.
    pub fn forward(&self) -> [f64; 3] {
        [self.c2w[0][2], self.c2w[1][2], self.c2w[2][2]]
    }

    /// Ray through the (possibly fractional) image point `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let r = &self.c2w;
        let w = std::array::from_fn(|i| r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]);
        Ray {
            origin: self.origin(),
            dir: normalize(w),
        }
    }

    pub fn pixel_ray(&self, u: usize, v: usize) -> Result<Ray> {
        if u >= self.width || v >= self.height {
            return Err(Error::invalid(
                "renderer",
                format!("pixel ({u}, {v}) outside {}x{} image", self.width, self.height),
            ));
        }
        Ok(self.ray_through(u as f64, v as f64))
    }

    pub fn generate_rays(&self, pixels: &[(usize, usize)]) -> Result<Vec<Ray>> {
        pixels.iter().map(|&(u, v)| self.pixel_ray(u, v)).collect()
    }

    /// Rays for every pixel in row-major order.
    pub fn all_rays(&self) -> Vec<Ray> {
        (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .map(|(u, v)| self.ray_through(u as f64, v as f64))
            .collect()
    }

    /// World point to camera space.
    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = sub(p, self.origin());
        let r = &self.c2w;
        std::array::from_fn(|j| r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2])
    }

    /// Projects a camera-space point to image coordinates.
    pub fn project(&self, pc: [f64; 3]) -> Option<(f64, f64)> {
        (pc[2] > 0.0).then(|| (self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy))
    }
}

/// `‖RᵀR − I‖∞` of the rotation block, or `inf` if the last row is not `[0,0,0,1]`.
pub fn rigidity_error(m: &Mat4) -> f64 {
    if m[3] != [0.0, 0.0, 0.0, 1.0] || m.iter().flatten().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

pub const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];
