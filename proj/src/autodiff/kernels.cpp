#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpft/errors.hpp"

namespace mpft::ad::kernels {

namespace {

std::vector<double>& sized(std::vector<double>* buf, std::size_t n) {
  if (buf->empty()) buf->assign(n, 0.0);
  return *buf;
}

std::size_t rows_of(const Tensor& t) { return t.size() / t.shape().back(); }

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor forward(OpKind kind, const OpAttrs& attrs, std::span<const Tensor* const> in,
               std::vector<double>& saved) {
  switch (kind) {
    case OpKind::Constant:
    case OpKind::Leaf:
      throw ContractError("leaf nodes have no forward rule");

    case OpKind::MatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      std::vector<double> out(m * n, 0.0);
      const double* pa = a.data().data();
      const double* pb = b.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          const double* brow = pb + p * n;
          for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
      }
      return Tensor({m, n}, std::move(out));
    }

    case OpKind::Transpose: {
      const Tensor& a = *in[0];
      const std::size_t m = a.dim(0), n = a.dim(1);
      std::vector<double> out(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
      return Tensor({n, m}, std::move(out));
    }

    case OpKind::BatchMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
      const std::size_t n = attrs.flag ? b.dim(1) : b.dim(2);
      std::vector<double> out(batch * m * n, 0.0);
      for (std::size_t s = 0; s < batch; ++s) {
        const double* pa = a.data().data() + s * m * k;
        const double* pb = b.data().data() + s * k * n;
        double* po = out.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            if (attrs.flag) {
              for (std::size_t q = 0; q < k; ++q) acc += pa[i * k + q] * pb[j * k + q];
            } else {
              for (std::size_t q = 0; q < k; ++q) acc += pa[i * k + q] * pb[q * n + j];
            }
            po[i * n + j] = acc;
          }
        }
      }
      return Tensor({batch, m, n}, std::move(out));
    }

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = kind == OpKind::Add ? a[i] + b[i] : kind == OpKind::Sub ? a[i] - b[i] : a[i] * b[i];
      }
      return Tensor(a.shape(), std::move(out));
    }

    case OpKind::Relu:
    case OpKind::Softplus:
    case OpKind::Scale: {
      const Tensor& a = *in[0];
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (kind == OpKind::Relu) {
          out[i] = a[i] > 0.0 ? a[i] : 0.0;
        } else if (kind == OpKind::Softplus) {
          out[i] = softplus(a[i]);
        } else {
          out[i] = a[i] * attrs.scalar;
        }
      }
      return Tensor(a.shape(), std::move(out));
    }

    case OpKind::ScaleBy: {
      const Tensor& a = *in[0];
      const double s = (*in[1])[0];
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
      return Tensor(a.shape(), std::move(out));
    }

    case OpKind::AddRow: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t d = b.size();
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i % d];
      return Tensor(a.shape(), std::move(out));
    }

    case OpKind::Reshape:
      return in[0]->reshaped(attrs.shape);

    case OpKind::LayerNorm: {
      const Tensor& x = *in[0];
      const Tensor& gain = *in[1];
      const Tensor& bias = *in[2];
      const std::size_t d = x.shape().back();
      const std::size_t rows = rows_of(x);
      std::vector<double> out(x.size());
      saved.assign(2 * rows, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += px[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (px[j] - mean) * (px[j] - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + attrs.scalar);
        saved[2 * r] = mean;
        saved[2 * r + 1] = rstd;
        for (std::size_t j = 0; j < d; ++j) {
          out[r * d + j] = (px[j] - mean) * rstd * gain[j] + bias[j];
        }
      }
      return Tensor(x.shape(), std::move(out));
    }

    case OpKind::Softmax: {
      const Tensor& x = *in[0];
      const std::size_t d = x.shape().back();
      const std::size_t rows = rows_of(x);
      std::vector<double> out(x.size());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.data().data() + r * d;
        const double mx = *std::max_element(px, px + d);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          out[r * d + j] = std::exp(px[j] - mx);
          total += out[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= total;
      }
      return Tensor(x.shape(), std::move(out));
    }

    case OpKind::SplitHeads: {
      const Tensor& x = *in[0];
      const std::size_t heads = attrs.count, tokens = attrs.count2;
      const std::size_t width = x.dim(1), head_dim = width / heads;
      const std::size_t batch = x.dim(0) / tokens;
      std::vector<double> out(x.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < head_dim; ++j)
              out[((b * heads + h) * tokens + t) * head_dim + j] =
                  x[(b * tokens + t) * width + h * head_dim + j];
      return Tensor({batch * heads, tokens, head_dim}, std::move(out));
    }

    case OpKind::MergeHeads: {
      const Tensor& x = *in[0];
      const std::size_t heads = attrs.count;
      const std::size_t tokens = x.dim(1), head_dim = x.dim(2);
      const std::size_t batch = x.dim(0) / heads, width = heads * head_dim;
      std::vector<double> out(x.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < head_dim; ++j)
              out[(b * tokens + t) * width + h * head_dim + j] =
                  x[((b * heads + h) * tokens + t) * head_dim + j];
      return Tensor({batch * tokens, width}, std::move(out));
    }

    case OpKind::MeanTokens: {
      const Tensor& x = *in[0];
      const std::size_t batch = x.dim(0), tokens = x.dim(1), d = x.dim(2);
      std::vector<double> out(batch * d, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t j = 0; j < d; ++j) out[b * d + j] += x[(b * tokens + t) * d + j];
        for (std::size_t j = 0; j < d; ++j) out[b * d + j] /= static_cast<double>(tokens);
      }
      return Tensor({batch, d}, std::move(out));
    }

    case OpKind::Sum: {
      double total = 0.0;
      for (double v : in[0]->data()) total += v;
      return Tensor::scalar(total);
    }

    case OpKind::SoftmaxCrossEntropy: {
      const Tensor& z = *in[0];
      const std::size_t batch = z.dim(0), classes = z.dim(1);
      saved.assign(batch * classes, 0.0);
      double loss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* pz = z.data().data() + b * classes;
        const double mx = *std::max_element(pz, pz + classes);
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) total += std::exp(pz[c] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t c = 0; c < classes; ++c) saved[b * classes + c] = std::exp(pz[c] - lse);
        loss += lse - pz[attrs.labels[b]];
      }
      return Tensor::scalar(loss / static_cast<double>(batch));
    }
  }
  throw ContractError("unknown op kind");
}

void backward(OpKind kind, const OpAttrs& attrs, std::span<const Tensor* const> in,
              const Tensor& output, std::span<const double> saved, std::span<const double> g,
              std::span<std::vector<double>* const> grads) {
  switch (kind) {
    case OpKind::Constant:
    case OpKind::Leaf:
      return;

    case OpKind::MatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (grads[0]) {
        auto& da = sized(grads[0], a.size());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
            da[i * k + p] += acc;
          }
      }
      if (grads[1]) {
        auto& db = sized(grads[1], b.size());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av * g[i * n + j];
          }
      }
      return;
    }

    case OpKind::Transpose: {
      const Tensor& a = *in[0];
      const std::size_t m = a.dim(0), n = a.dim(1);
      auto& da = sized(grads[0], a.size());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
      return;
    }

    case OpKind::BatchMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
      const std::size_t n = attrs.flag ? b.dim(1) : b.dim(2);
      std::vector<double>* da = grads[0] ? &sized(grads[0], a.size()) : nullptr;
      std::vector<double>* db = grads[1] ? &sized(grads[1], b.size()) : nullptr;
      for (std::size_t s = 0; s < batch; ++s) {
        const double* pa = a.data().data() + s * m * k;
        const double* pb = b.data().data() + s * k * n;
        const double* pg = g.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = pg[i * n + j];
            for (std::size_t q = 0; q < k; ++q) {
              if (attrs.flag) {
                if (da) (*da)[s * m * k + i * k + q] += gv * pb[j * k + q];
                if (db) (*db)[s * k * n + j * k + q] += gv * pa[i * k + q];
              } else {
                if (da) (*da)[s * m * k + i * k + q] += gv * pb[q * n + j];
                if (db) (*db)[s * k * n + q * n + j] += gv * pa[i * k + q];
              }
            }
          }
        }
      }
      return;
    }

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (grads[0]) {
        auto& da = sized(grads[0], a.size());
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += kind == OpKind::Mul ? g[i] * b[i] : g[i];
      }
      if (grads[1]) {
        auto& db = sized(grads[1], b.size());
        for (std::size_t i = 0; i < b.size(); ++i) {
          db[i] += kind == OpKind::Mul ? g[i] * a[i] : kind == OpKind::Sub ? -g[i] : g[i];
        }
      }
      return;
    }

    case OpKind::Relu:
    case OpKind::Softplus:
    case OpKind::Scale: {
      const Tensor& a = *in[0];
      auto& da = sized(grads[0], a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (kind == OpKind::Relu) {
          if (a[i] > 0.0) da[i] += g[i];
        } else if (kind == OpKind::Softplus) {
          da[i] += g[i] * sigmoid(a[i]);
        } else {
          da[i] += g[i] * attrs.scalar;
        }
      }
      return;
    }

    case OpKind::ScaleBy: {
      const Tensor& a = *in[0];
      const double s = (*in[1])[0];
      if (grads[0]) {
        auto& da = sized(grads[0], a.size());
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += g[i] * s;
      }
      if (grads[1]) {
        auto& ds = sized(grads[1], 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += g[i] * a[i];
        ds[0] += acc;
      }
      return;
    }

    case OpKind::AddRow: {
      const Tensor& a = *in[0];
      const std::size_t d = in[1]->size();
      if (grads[0]) {
        auto& da = sized(grads[0], a.size());
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += g[i];
      }
      if (grads[1]) {
        auto& db = sized(grads[1], d);
        for (std::size_t i = 0; i < a.size(); ++i) db[i % d] += g[i];
      }
      return;
    }

    case OpKind::Reshape: {
      auto& da = sized(grads[0], in[0]->size());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
      return;
    }

    case OpKind::LayerNorm: {
      const Tensor& x = *in[0];
      const Tensor& gain = *in[1];
      const std::size_t d = x.shape().back();
      const std::size_t rows = rows_of(x);
      std::vector<double>* dx = grads[0] ? &sized(grads[0], x.size()) : nullptr;
      std::vector<double>* dgain = grads[1] ? &sized(grads[1], d) : nullptr;
      std::vector<double>* dbias = grads[2] ? &sized(grads[2], d) : nullptr;
      std::vector<double> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double mean = saved[2 * r];
        const double rstd = saved[2 * r + 1];
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double gv = g[r * d + j];
          xhat[j] = (x[r * d + j] - mean) * rstd;
          dxhat[j] = gv * gain[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xhat[j];
          if (dgain) (*dgain)[j] += gv * xhat[j];
          if (dbias) (*dbias)[j] += gv;
        }
        if (!dx) continue;
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          (*dx)[r * d + j] += rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
      }
      return;
    }

    case OpKind::Softmax: {
      const std::size_t d = output.shape().back();
      const std::size_t rows = rows_of(output);
      auto& dx = sized(grads[0], output.size());
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * output[r * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          dx[r * d + j] += output[r * d + j] * (g[r * d + j] - dot);
        }
      }
      return;
    }

    case OpKind::SplitHeads: {
      const Tensor& x = *in[0];
      const std::size_t heads = attrs.count, tokens = attrs.count2;
      const std::size_t width = x.dim(1), head_dim = width / heads;
      const std::size_t batch = x.dim(0) / tokens;
      auto& dx = sized(grads[0], x.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < head_dim; ++j)
              dx[(b * tokens + t) * width + h * head_dim + j] +=
                  g[((b * heads + h) * tokens + t) * head_dim + j];
      return;
    }

    case OpKind::MergeHeads: {
      const Tensor& x = *in[0];
      const std::size_t heads = attrs.count;
      const std::size_t tokens = x.dim(1), head_dim = x.dim(2);
      const std::size_t batch = x.dim(0) / heads, width = heads * head_dim;
      auto& dx = sized(grads[0], x.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < head_dim; ++j)
              dx[((b * heads + h) * tokens + t) * head_dim + j] +=
                  g[(b * tokens + t) * width + h * head_dim + j];
      return;
    }

    case OpKind::MeanTokens: {
      const Tensor& x = *in[0];
      const std::size_t batch = x.dim(0), tokens = x.dim(1), d = x.dim(2);
      auto& dx = sized(grads[0], x.size());
      const double inv = 1.0 / static_cast<double>(tokens);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t j = 0; j < d; ++j) dx[(b * tokens + t) * d + j] += g[b * d + j] * inv;
      return;
    }

    case OpKind::Sum: {
      auto& dx = sized(grads[0], in[0]->size());
      for (double& v : dx) v += g[0];
      return;
    }

    case OpKind::SoftmaxCrossEntropy: {
      const Tensor& z = *in[0];
      const std::size_t batch = z.dim(0), classes = z.dim(1);
      auto& dz = sized(grads[0], z.size());
      const double scale = g[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          double p = saved[b * classes + c];
          if (c == attrs.labels[b]) p -= 1.0;
          dz[b * classes + c] += p * scale;
        }
      }
      return;
    }
  }
}

}  // namespace mpft::ad::kernels
