#pragma once

// Recovery of the sensor-sized scene field from a lensless measurement given
// the PSF. All solvers work on the padded grid of optics::ConvGeometry, where
// the model is y = C(h * v) with C the crop onto the sensor window.

#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "lenslessmic/error.hpp"
#include "lenslessmic/fft.hpp"
#include "lenslessmic/matrix.hpp"
#include "lenslessmic/optics.hpp"

namespace lenslessmic::solvers {

enum class SolverKind { wiener, fista, admm };

inline std::string to_string(SolverKind k) {
  switch (k) {
    case SolverKind::wiener: return "wiener";
    case SolverKind::fista: return "fista";
    case SolverKind::admm: return "admm";
  }
  return "?";
}

inline SolverKind solver_kind_from_string(const std::string& s) {
  if (s == "wiener") return SolverKind::wiener;
  if (s == "fista") return SolverKind::fista;
  if (s == "admm") return SolverKind::admm;
  throw Error(ErrorKind::invalid_argument, "unknown solver kind: " + s);
}

struct SolverConfig {
  SolverKind kind = SolverKind::admm;
  int iters = 100;
  double reg_lambda = 1e-4;
  // ADMM penalties: data split, TV split, nonnegativity split; TV soft-threshold weight.
  double mu1 = 1e-4;
  double mu2 = 1e-4;
  double mu3 = 1e-4;
  double tau = 1e-4;
  bool nonneg = true;
  // Optional known scene support in sensor coordinates. The nonnegativity
  // projection also zeroes everything outside it.
  std::optional<optics::Roi> support;

  void validate() const {
    require(iters >= 1, "solver iters must be >= 1");
    require(reg_lambda >= 0.0 && std::isfinite(reg_lambda), "reg_lambda must be finite and >= 0");
    require(mu1 > 0.0 && mu2 > 0.0 && mu3 > 0.0, "ADMM penalties must be positive");
    require(tau >= 0.0, "tau must be >= 0");
  }

  bool operator==(const SolverConfig& o) const {
    const auto key = [](const std::optional<optics::Roi>& r) {
      return r ? std::array<std::size_t, 5>{1, r->row, r->col, r->height, r->width} : std::array<std::size_t, 5>{};
    };
    return kind == o.kind && iters == o.iters && reg_lambda == o.reg_lambda && mu1 == o.mu1 && mu2 == o.mu2 &&
           mu3 == o.mu3 && tau == o.tau && nonneg == o.nonneg && key(support) == key(o.support);
  }
};

struct Recovery {
  Matrix estimate;                 // sensor-sized scene field
  std::vector<double> residuals;   // ADMM primal residual norm per iteration
  std::vector<double> objective;   // FISTA objective per iteration
};

// Convolution with the centred kernel on the padded grid, plus crop/pad to the sensor window.
class ConvOperator {
 public:
  explicit ConvOperator(const optics::PointSpreadFunction& psf)
      : ConvOperator(psf, optics::ConvGeometry::for_psf(psf)) {}

  ConvOperator(const optics::PointSpreadFunction& psf, const optics::ConvGeometry& geo)
      : geo_(geo), fft_(geo_.padded_rows, geo_.padded_cols) {
    kernel_ = fft_.forward(optics::centered_kernel(psf, geo_));
    power_.resize(kernel_.size());
    for (std::size_t i = 0; i < kernel_.size(); ++i) power_[i] = std::norm(kernel_[i]);
  }

  const optics::ConvGeometry& geometry() const { return geo_; }
  const Spectrum& kernel() const { return kernel_; }
  const std::vector<double>& power() const { return power_; }
  Fft2& fft() { return fft_; }

  double lipschitz() const {
    double l = 0.0;
    for (double p : power_) l = std::max(l, p);
    return l;
  }

  Matrix apply(const Matrix& v) { return filter(v, false); }
  Matrix adjoint(const Matrix& v) { return filter(v, true); }

 private:
  Matrix filter(const Matrix& v, bool conjugate) {
    Spectrum s = fft_.forward(v);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= conjugate ? std::conj(kernel_[i]) : kernel_[i];
    return fft_.inverse(s);
  }

  optics::ConvGeometry geo_;
  Fft2 fft_;
  Spectrum kernel_;
  std::vector<double> power_;
};

namespace detail {

inline void check_measurement(const Matrix& y, const optics::PointSpreadFunction& psf) {
  require(y.rows() == psf.kernel.rows() && y.cols() == psf.kernel.cols(), "measurement and PSF shapes differ");
  require(all_finite(y), "measurement contains non-finite values");
}

// 1 inside the allowed region of the padded grid, 0 outside.
inline Matrix support_mask(const optics::ConvGeometry& geo, const std::optional<optics::Roi>& support) {
  if (!support) return Matrix(geo.padded_rows, geo.padded_cols, 1.0);
  const auto& r = *support;
  require(r.height > 0 && r.width > 0 && r.row + r.height <= geo.sensor_rows && r.col + r.width <= geo.sensor_cols,
          "solver support lies outside the sensor window");
  Matrix m(geo.padded_rows, geo.padded_cols);
  for (std::size_t i = 0; i < r.height; ++i)
    for (std::size_t j = 0; j < r.width; ++j) m(geo.offset_row + r.row + i, geo.offset_col + r.col + j) = 1.0;
  return m;
}

// A known support allows a smaller padded grid.
inline optics::ConvGeometry geometry_for(const optics::PointSpreadFunction& psf, const SolverConfig& cfg) {
  return cfg.support ? optics::ConvGeometry::for_support(psf, *cfg.support) : optics::ConvGeometry::for_psf(psf);
}

inline void check_finite(const Matrix& m, int iter) {
  if (!all_finite(m))
    throw Error(ErrorKind::divergence, "solver diverged at iteration " + std::to_string(iter));
}

}  // namespace detail

// x = F^-1( conj(H) Y / (|H|^2 + lambda) ) on the padded grid, cropped to the sensor window.
inline Recovery wiener_recover(const Matrix& y, const optics::PointSpreadFunction& psf, double reg_lambda) {
  detail::check_measurement(y, psf);
  require(reg_lambda >= 0.0 && std::isfinite(reg_lambda), "reg_lambda must be finite and >= 0");
  ConvOperator op(psf);
  const double floor = 1e-24 * std::max(op.lipschitz(), 1e-300);
  if (reg_lambda == 0.0)
    for (double p : op.power())
      if (p <= floor) throw Error(ErrorKind::singular_system, "PSF spectrum has zeros; Wiener needs lambda > 0");
  Spectrum s = op.fft().forward(op.geometry().pad(y));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::conj(op.kernel()[i]) * s[i] / (op.power()[i] + reg_lambda);
  return {op.geometry().crop(op.fft().inverse(s)), {}, {}};
}

// 0.5 ||C(h * v) - y||^2 + lambda ||v||_1 over the padded grid.
inline double fista_objective(ConvOperator& op, const Matrix& padded_v, const Matrix& y, double reg_lambda) {
  const Matrix r = op.geometry().crop(op.apply(padded_v));
  double fit = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = r.values()[i] - y.values()[i];
    fit += d * d;
  }
  double l1 = 0.0;
  for (double v : padded_v.values()) l1 += std::abs(v);
  return 0.5 * fit + reg_lambda * l1;
}

// Monotone FISTA (MFISTA): accelerated proximal gradient where each iterate is
// the better of the proximal candidate and the previous iterate, so the
// objective never increases. Step 1/L with L = max |H|^2.
inline Recovery fista_recover(const Matrix& y, const optics::PointSpreadFunction& psf, const SolverConfig& cfg) {
  detail::check_measurement(y, psf);
  cfg.validate();
  ConvOperator op(psf, detail::geometry_for(psf, cfg));
  const auto& geo = op.geometry();
  const double lip = op.lipschitz();
  require(lip > 0.0, "PSF has zero energy", ErrorKind::singular_system);
  const double step = 1.0 / lip;
  const double shrink = cfg.reg_lambda * step;
  const Matrix allowed = detail::support_mask(geo, cfg.support);

  Matrix x(geo.padded_rows, geo.padded_cols), x_prev = x, z = x, momentum = x;
  double t = 1.0;
  double fx = fista_objective(op, x, y, cfg.reg_lambda);
  Recovery out;
  out.objective.reserve(static_cast<std::size_t>(cfg.iters));

  for (int k = 1; k <= cfg.iters; ++k) {
    // gradient step at the momentum point
    Matrix residual = geo.crop(op.apply(momentum));
    for (std::size_t i = 0; i < residual.size(); ++i) residual.values()[i] -= y.values()[i];
    const Matrix grad = op.adjoint(geo.pad(residual));
    for (std::size_t i = 0; i < z.size(); ++i) {
      double v = momentum.values()[i] - step * grad.values()[i];
      v = std::copysign(std::max(std::abs(v) - shrink, 0.0), v);
      if (cfg.nonneg) v = std::max(v, 0.0);
      z.values()[i] = v * allowed.values()[i];
    }
    detail::check_finite(z, k);
    const double fz = fista_objective(op, z, y, cfg.reg_lambda);
    x_prev = x;
    if (fz <= fx) {
      x = z;
      fx = fz;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t i = 0; i < momentum.size(); ++i) {
      const double xi = x.values()[i];
      momentum.values()[i] = xi + (t / t_next) * (z.values()[i] - xi) + ((t - 1.0) / t_next) * (xi - x_prev.values()[i]);
    }
    t = t_next;
    out.objective.push_back(fx);
  }
  out.estimate = geo.crop(x);
  return out;
}

namespace detail {

// Circular forward differences along rows and columns.
inline void gradient(const Matrix& v, Matrix& gr, Matrix& gc) {
  const std::size_t R = v.rows(), C = v.cols();
  const double* pv = v.values().data();
  double* pr = gr.values().data();
  double* pc = gc.values().data();
  for (std::size_t r = 0; r < R; ++r) {
    const double* cur = pv + r * C;
    const double* next = pv + (r + 1 == R ? 0 : r + 1) * C;
    double* orow = pr + r * C;
    double* ocol = pc + r * C;
    for (std::size_t c = 0; c < C; ++c) orow[c] = next[c] - cur[c];
    for (std::size_t c = 0; c + 1 < C; ++c) ocol[c] = cur[c + 1] - cur[c];
    ocol[C - 1] = cur[0] - cur[C - 1];
  }
}

// Adjoint of `gradient`.
inline void gradient_adjoint(const Matrix& gr, const Matrix& gc, Matrix& out) {
  const std::size_t R = gr.rows(), C = gr.cols();
  const double* pr = gr.values().data();
  const double* pc = gc.values().data();
  double* po = out.values().data();
  for (std::size_t r = 0; r < R; ++r) {
    const double* prev = pr + (r == 0 ? R - 1 : r - 1) * C;
    const double* cur = pr + r * C;
    const double* col = pc + r * C;
    double* o = po + r * C;
    for (std::size_t c = 0; c < C; ++c) o[c] = prev[c] - cur[c] - col[c];
    o[0] += col[C - 1];
    for (std::size_t c = 1; c < C; ++c) o[c] += col[c - 1];
  }
}

inline double soft(double v, double t) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); }

}  // namespace detail

// ADMM with three splits: x = h * v (data, solved per pixel with the crop),
// u = grad v (anisotropic TV, soft threshold tau/mu2), w = v (nonnegativity).
// The v-update is diagonal in the Fourier domain.
inline Recovery admm_recover(const Matrix& y, const optics::PointSpreadFunction& psf, const SolverConfig& cfg) {
  detail::check_measurement(y, psf);
  cfg.validate();
  ConvOperator op(psf, detail::geometry_for(psf, cfg));
  const auto& geo = op.geometry();
  Fft2& fft = op.fft();
  const std::size_t R = geo.padded_rows, C = geo.padded_cols;
  const double mu1 = cfg.mu1, mu2 = cfg.mu2, mu3 = cfg.mu3;

  // Inverse of the v-update system: 1 / (mu1 |H|^2 + mu2 |grad|^2 + mu3).
  std::vector<double> denom(fft.spectrum_size());
  const std::size_t half = fft.half_cols();
  for (std::size_t kr = 0; kr < R; ++kr) {
    const double lr = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * kr / R);
    for (std::size_t kc = 0; kc < half; ++kc) {
      const double lc = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * kc / C);
      const std::size_t i = kr * half + kc;
      denom[i] = 1.0 / (mu1 * op.power()[i] + mu2 * (lr + lc) + mu3);
    }
  }

  const Matrix ypad = geo.pad(y);
  Matrix crop_mask = geo.pad(Matrix(geo.sensor_rows, geo.sensor_cols, 1.0));
  const Matrix allowed = detail::support_mask(geo, cfg.support);

  Matrix v(R, C), hv(R, C), x(R, C), w(R, C);
  Matrix ur(R, C), uc(R, C), gr(R, C), gc(R, C);
  Matrix xi(R, C), eta_r(R, C), eta_c(R, C), rho(R, C);
  Matrix data_term(R, C), rest(R, C), tv_adj(R, C);
  Spectrum sa, sb, sv(fft.spectrum_size());

  Recovery out;
  out.residuals.reserve(static_cast<std::size_t>(cfg.iters));
  const double thresh = cfg.tau / mu2;
  const double inv_mu2 = 1.0 / mu2, inv_mu3 = 1.0 / mu3;
  // x-update weight: 1 / (C^T C + mu1), 1 inside the sensor window only
  std::vector<double> x_weight(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) x_weight[i] = 1.0 / (crop_mask.values()[i] + mu1);
  const std::size_t n = v.size();
  const bool nonneg = cfg.nonneg;

  for (int k = 1; k <= cfg.iters; ++k) {
    {
      const double *pv = v.values().data(), *phv = hv.values().data(), *py = ypad.values().data();
      const double *pxi = xi.values().data(), *per = eta_r.values().data(), *pec = eta_c.values().data();
      const double *prho = rho.values().data(), *pal = allowed.values().data(), *pxw = x_weight.data();
      double *pur = ur.values().data(), *puc = uc.values().data(), *px = x.values().data(), *pw = w.values().data();
      double *pgr = gr.values().data(), *pgc = gc.values().data(), *pd = data_term.values().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double a = detail::soft(pgr[i] + per[i] * inv_mu2, thresh);
        const double b = detail::soft(pgc[i] + pec[i] * inv_mu2, thresh);
        pur[i] = a;
        puc[i] = b;
        const double xv = (pxi[i] + mu1 * phv[i] + py[i]) * pxw[i];
        px[i] = xv;
        const double wv = pv[i] + prho[i] * inv_mu3;
        pw[i] = (nonneg ? std::max(wv, 0.0) : wv) * pal[i];
        pd[i] = mu1 * xv - pxi[i];
        pgr[i] = mu2 * a - per[i];
        pgc[i] = mu2 * b - pec[i];
      }
    }
    detail::gradient_adjoint(gr, gc, tv_adj);
    {
      const double *pt = tv_adj.values().data(), *pw = w.values().data(), *prho = rho.values().data();
      double* pr = rest.values().data();
      for (std::size_t i = 0; i < n; ++i) pr[i] = pt[i] + mu3 * pw[i] - prho[i];
    }

    fft.forward(data_term, sa);
    fft.forward(rest, sb);
    const auto& kern = op.kernel();
    // Written out by hand: std::complex operator* carries NaN-recovery overhead.
    for (std::size_t i = 0; i < sv.size(); ++i) {
      const double kr = kern[i].real(), ki = kern[i].imag();
      const double ar = sa[i].real(), ai = sa[i].imag();
      sv[i] = {(kr * ar + ki * ai + sb[i].real()) * denom[i], (kr * ai - ki * ar + sb[i].imag()) * denom[i]};
    }
    fft.inverse(sv, v);
    for (std::size_t i = 0; i < sv.size(); ++i) {
      const double kr = kern[i].real(), ki = kern[i].imag();
      const double vr = sv[i].real(), vi = sv[i].imag();
      sv[i] = {kr * vr - ki * vi, kr * vi + ki * vr};
    }
    fft.inverse(sv, hv);
    detail::check_finite(v, k);
    detail::gradient(v, gr, gc);

    double res = 0.0;
    {
      const double *pv = v.values().data(), *phv = hv.values().data(), *px = x.values().data();
      const double *pgr = gr.values().data(), *pgc = gc.values().data(), *pur = ur.values().data();
      const double *puc = uc.values().data(), *pw = w.values().data();
      double *pxi = xi.values().data(), *per = eta_r.values().data(), *pec = eta_c.values().data();
      double* prho = rho.values().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double d1 = phv[i] - px[i];
        const double d2r = pgr[i] - pur[i];
        const double d2c = pgc[i] - puc[i];
        const double d3 = pv[i] - pw[i];
        pxi[i] += mu1 * d1;
        per[i] += mu2 * d2r;
        pec[i] += mu2 * d2c;
        prho[i] += mu3 * d3;
        res += d1 * d1 + d2r * d2r + d2c * d2c + d3 * d3;
      }
    }
    if (!std::isfinite(res)) throw Error(ErrorKind::divergence, "ADMM diverged at iteration " + std::to_string(k));
    out.residuals.push_back(std::sqrt(res));
  }
  out.estimate = geo.crop(v);
  return out;
}

inline Recovery recover(const Matrix& y, const optics::PointSpreadFunction& psf, const SolverConfig& cfg) {
  switch (cfg.kind) {
    case SolverKind::wiener: return wiener_recover(y, psf, cfg.reg_lambda);
    case SolverKind::fista: return fista_recover(y, psf, cfg);
    case SolverKind::admm: return admm_recover(y, psf, cfg);
  }
  throw Error(ErrorKind::invalid_argument, "unknown solver kind");
}

}  // namespace lenslessmic::solvers
