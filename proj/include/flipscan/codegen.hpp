#pragma once

// Emits a self-contained C program for a model. Code and weights go to two
// translation units so weight values can never become instruction
// immediates: every build of one structure has the same .text bytes.
//
// Program protocol: argv[1] is an FSCN1 tensor file. Classifier heads print
// one class index per sample; tanh heads print one line of space-separated
// floats. Exit 2 on a malformed file (nothing printed), 3 on a shape
// mismatch with the compiled model.

#include <cstdio>
#include <string>

#include "flipscan/model.hpp"
#include "flipscan/tensor_io.hpp"

namespace flipscan {

struct KernelSource {
  std::string kernel_c;
  std::string weights_c;
};

namespace detail {

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

inline std::string float_array(const std::string& name, const std::vector<float>& v) {
  std::string out = "const float " + name + "[" + std::to_string(v.size()) + "] = {";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i % 8 == 0) out += "\n  ";
    out += fmt("%.9ef,", static_cast<double>(v[i]));
    if (i % 8 != 7) out += ' ';
  }
  return out + "\n};\n";
}

inline std::string int8_array(const std::string& name, const std::vector<std::int8_t>& v) {
  std::string out = "const signed char " + name + "[" + std::to_string(v.size()) + "] = {";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i % 16 == 0) out += "\n  ";
    out += std::to_string(static_cast<int>(v[i])) + ",";
  }
  return out + "\n};\n";
}

}  // namespace detail

inline KernelSource emit_kernel_source(const ModelSpec& m, const WeightSet& ws) {
  const auto shapes = m.shapes();
  check_weights(m, ws);
  const bool q = m.quantized;
  KernelSource src;
  auto& k = src.kernel_c;
  auto& w = src.weights_c;
  w = "/* " + m.name + " weights */\n";
  k = "/* " + m.name + " inference kernel */\n"
      "#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n";
  if (m.head == Head::Tanh) k += "#include <math.h>\n";
  k += detail::fmt("\n#define IN_SIZE %zu\n#define OUT_SIZE %zu\n\n", m.input_size(), m.class_count);

  std::size_t max_buf = 1;
  for (const auto& s : shapes) max_buf = std::max(max_buf, shape_size(s));

  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!has_params(m.layers[i].kind)) continue;
    const auto& lw = ws.layers[i];
    const auto wn = detail::fmt("W%zu", i), bn = detail::fmt("B%zu", i), sn = detail::fmt("S%zu", i);
    if (q) {
      k += detail::fmt("extern const signed char W%zu[%zu];\nextern const float S%zu;\n", i, lw.wq.size(), i);
      w += detail::int8_array(wn, lw.wq);
      w += detail::fmt("const float %s = %.9ef;\n", sn.c_str(), static_cast<double>(lw.scale));
    } else {
      k += detail::fmt("extern const float W%zu[%zu];\n", i, lw.w.size());
      w += detail::float_array(wn, lw.w);
    }
    k += detail::fmt("extern const float B%zu[%zu];\n", i, lw.b.size());
    w += detail::float_array(bn, lw.b);
  }
  k += detail::fmt("\nstatic float buf_a[%zu], buf_b[%zu];\n", max_buf, max_buf);

  Shape in = m.input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const auto& os = shapes[i];
    k += detail::fmt("\nstatic void layer%zu(const float *restrict in, float *restrict out) {\n", i);
    switch (l.kind) {
      case LayerKind::Dense: {
        const std::size_t n_in = shape_size(in), n_out = l.units;
        k += detail::fmt("  for (int o = 0; o < %zu; ++o) out[o] = %s;\n", n_out, q ? "0.0f" : detail::fmt("B%zu[o]", i).c_str());
        k += detail::fmt("  for (int i = 0; i < %zu; ++i) {\n    const float xi = in[i];\n", n_in);
        k += detail::fmt("    for (int o = 0; o < %zu; ++o) out[o] += %sW%zu[i * %zu + o] * xi;\n  }\n", n_out,
                         q ? "(float)" : "", i, n_out);
        if (q) k += detail::fmt("  for (int o = 0; o < %zu; ++o) out[o] = out[o] * S%zu + B%zu[o];\n", n_out, i, i);
        break;
      }
      case LayerKind::Conv2d: {
        const std::size_t C = in[0], H = in[1], W = in[2], OH = os[1], OW = os[2];
        k += detail::fmt("  for (int f = 0; f < %zu; ++f)\n    for (int oy = 0; oy < %zu; ++oy)\n"
                         "      for (int ox = 0; ox < %zu; ++ox) {\n",
                         l.units, OH, OW);
        k += detail::fmt("        float acc = %s;\n", q ? "0.0f" : detail::fmt("B%zu[f]", i).c_str());
        k += detail::fmt("        for (int c = 0; c < %zu; ++c)\n          for (int ky = 0; ky < %zu; ++ky)\n"
                         "            for (int kx = 0; kx < %zu; ++kx)\n",
                         C, l.kernel_h, l.kernel_w);
        k += detail::fmt("              acc += %sW%zu[((f * %zu + c) * %zu + ky) * %zu + kx] * "
                         "in[(c * %zu + oy * %zu + ky) * %zu + ox * %zu + kx];\n",
                         q ? "(float)" : "", i, C, l.kernel_h, l.kernel_w, H, l.stride, W, l.stride);
        k += detail::fmt("        out[(f * %zu + oy) * %zu + ox] = %s;\n      }\n", OH, OW,
                         q ? detail::fmt("acc * S%zu + B%zu[f]", i, i).c_str() : "acc");
        break;
      }
      case LayerKind::Relu:
        k += detail::fmt("  for (int i = 0; i < %zu; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;\n", shape_size(os));
        break;
    }
    k += "}\n";
    in = os;
  }

  k += "\nstatic const float *infer(const float *x) {\n  const float *cur = x;\n";
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const char* dst = i % 2 == 0 ? "buf_a" : "buf_b";
    k += detail::fmt("  layer%zu(cur, %s);\n  cur = %s;\n", i, dst, dst);
  }
  k += "  return cur;\n}\n";

  if (m.head == Head::Argmax) {
    k += "\nstatic int argmax(const float *v) {\n  int best = 0;\n"
         "  for (int i = 1; i < OUT_SIZE; ++i)\n    if (v[i] > v[best]) best = i;\n  return best;\n}\n";
  }

  k += "\nint main(int argc, char **argv) {\n"
       "  if (argc < 2) return 2;\n"
       "  FILE *f = fopen(argv[1], \"r\");\n"
       "  if (!f) return 2;\n"
       "  char magic[8], kind[8];\n"
       "  int rank;\n"
       "  long dims[8], classes;\n"
       "  if (fscanf(f, \"%7s %d\", magic, &rank) != 2 || strcmp(magic, \"" + std::string(kTensorMagic) + "\") != 0) return 2;\n"
       "  if (rank < 2 || rank > 8) return 2;\n"
       "  for (int r = 0; r < rank; ++r)\n"
       "    if (fscanf(f, \"%ld\", &dims[r]) != 1 || dims[r] <= 0) return 2;\n"
       "  if (fscanf(f, \"%7s %ld\", kind, &classes) != 2 || strcmp(kind, \"f32\") != 0) return 2;\n"
       "  long per = 1;\n"
       "  for (int r = 1; r < rank; ++r) per *= dims[r];\n"
       "  if (per != IN_SIZE || classes != OUT_SIZE) return 3;\n"
       "  const long n = dims[0];\n"
       "  float *x = malloc((size_t)n * IN_SIZE * sizeof(float));\n"
       "  if (!x) return 2;\n"
       "  for (long i = 0; i < n * IN_SIZE; ++i)\n"
       "    if (fscanf(f, \"%f\", &x[i]) != 1) return 2;\n"
       "  fclose(f);\n"
       "  for (long s = 0; s < n; ++s) {\n"
       "    const float *y = infer(x + s * IN_SIZE);\n";
  if (m.head == Head::Argmax) {
    k += "    printf(\"%d\\n\", argmax(y));\n";
  } else {
    k += "    for (int o = 0; o < OUT_SIZE; ++o) printf(o ? \" %.9g\" : \"%.9g\", (double)tanhf(y[o]));\n"
         "    putchar('\\n');\n";
  }
  k += "  }\n  free(x);\n  return 0;\n}\n";
  return src;
}

}  // namespace flipscan
