// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "mxattn/attention.hpp"
#include "mxattn/block_quant.hpp"
#include "mxattn/codec.hpp"
#include "mxattn/error.hpp"
#include "mxattn/harness.hpp"
#include "mxattn/metrics.hpp"

namespace py = pybind11;
using namespace mxattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  Matrix m(rows, cols);
  if (rows * cols) std::memcpy(m.values().data(), a.data(), rows * cols * sizeof(double));
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  if (m.rows() * m.cols()) std::memcpy(a.mutable_data(), m.values().data(), m.rows() * m.cols() * sizeof(double));
  return a;
}

ElementKind fp8_kind(const std::string& name) {
  if (name == "e4m3") return ElementKind::E4M3;
  if (name == "e5m2") return ElementKind::E5M2;
  throw ConfigError("fp8 kind must be 'e4m3' or 'e5m2', got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_mxattn, m) {
  m.doc() = "Mixed-precision microscaling attention emulation";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::enum_<MxFormat>(m, "MxFormat")
      .value("MXFP8_E4M3", MxFormat::MXFP8_E4M3)
      .value("MXFP8_E5M2", MxFormat::MXFP8_E5M2)
      .value("MXFP4", MxFormat::MXFP4)
      .value("NVFP4", MxFormat::NVFP4);

  py::enum_<Granularity>(m, "Granularity")
      .value("PER_TENSOR", Granularity::PerTensor)
      .value("PER_BLOCK", Granularity::PerBlock)
      .value("PER_TOKEN", Granularity::PerToken);

  m.def("encode_e2m1", [](double x) { return encode_e2m1(x).raw(); }, py::arg("x"));
  m.def("decode_e2m1", [](std::uint8_t code) { return decode_e2m1(Fp4Code(code)); }, py::arg("code"));
  m.def("encode_fp8", [](double x, const std::string& kind) { return encode_fp8(x, fp8_kind(kind)); },
        py::arg("x"), py::arg("kind") = "e4m3");
  m.def("decode_fp8",
        [](std::uint8_t code, const std::string& kind) { return decode_fp8(code, fp8_kind(kind)); },
        py::arg("code"), py::arg("kind") = "e4m3");

  py::class_<DualQuantizedTensor>(m, "QuantizedTensor")
      .def_readonly("rows", &DualQuantizedTensor::rows)
      .def_readonly("cols", &DualQuantizedTensor::cols)
      .def_property_readonly("packed_low",
                             [](const DualQuantizedTensor& t) {
                               const auto& b = t.packed_low.bytes;
                               return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
                             })
      .def_property_readonly("scales_low", [](const DualQuantizedTensor& t) { return t.scales_low; })
      .def_property_readonly("high", [](const DualQuantizedTensor& t) { return t.high; })
      .def_property_readonly("scales_high",
                             [](const DualQuantizedTensor& t) {
                               std::vector<std::uint8_t> raw;
                               for (E8m0Scale s : t.scales_high) raw.push_back(s.raw());
                               return raw;
                             })
      .def_readonly("quant_scale", &DualQuantizedTensor::quant_scale)
      .def("dequantize_low", [](const DualQuantizedTensor& t) { return to_array(dequantize_low(t)); })
      .def("dequantize_high", [](const DualQuantizedTensor& t) { return to_array(dequantize_high(t)); });

  m.def(
      "quantize_dual",
      [](const Array& x, bool is_query, MxFormat low, MxFormat high, Granularity g) {
        return quantize_dual(to_matrix(x), is_query, QuantOptions{low, high, g});
      },
      py::arg("x"), py::arg("is_query") = false, py::arg("low_format") = MxFormat::NVFP4,
      py::arg("high_format") = MxFormat::MXFP8_E4M3, py::arg("granularity") = Granularity::PerToken);

  py::class_<AttentionConfig>(m, "AttentionConfig")
      .def(py::init<>())
      .def_readwrite("tile_m", &AttentionConfig::tile_m)
      .def_readwrite("tile_n", &AttentionConfig::tile_n)
      .def_readwrite("diag", &AttentionConfig::diag)
      .def_readwrite("sink", &AttentionConfig::sink)
      .def_readwrite("causal", &AttentionConfig::causal)
      .def_readwrite("low_format", &AttentionConfig::low_format)
      .def_readwrite("high_format", &AttentionConfig::high_format)
      .def_readwrite("granularity", &AttentionConfig::granularity);

  m.def(
      "plan_query_tile",
      [](std::size_t tile, std::size_t len_q, std::size_t len_k, const AttentionConfig& cfg) {
        std::vector<std::pair<std::size_t, bool>> out;
        for (const TileVisit& v : plan_query_tile(tile, len_q, len_k, cfg)) {
          out.emplace_back(v.key_tile, v.precision == TilePrecision::High);
        }
        return out;
      },
      py::arg("query_tile"), py::arg("len_q"), py::arg("len_k"), py::arg("config"),
      "List of (key_tile, is_high) in visit order.");

  m.def(
      "reference_attention",
      [](const Array& q, const Array& k, const Array& v, bool causal) {
        return to_array(reference_attention(to_matrix(q), to_matrix(k), to_matrix(v), causal));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("causal") = true);

  m.def(
      "mixed_attention",
      [](const Array& q, const Array& k, const Array& v, const AttentionConfig& cfg) {
        const Matrix qm = to_matrix(q), km = to_matrix(k), vm = to_matrix(v);
        Matrix out;
        {
          py::gil_scoped_release release;
          out = DmaEngine(qm, km, cfg).run(vm);
        }
        return to_array(out);
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("config") = AttentionConfig{});

  py::class_<Similarity>(m, "Similarity")
      .def_readonly("cos_sim", &Similarity::cos_sim)
      .def_readonly("rel_l1", &Similarity::rel_l1)
      .def_readonly("abs_l1", &Similarity::abs_l1)
      .def_readonly("rmse", &Similarity::rmse)
      .def_readonly("psnr", &Similarity::psnr);

  m.def(
      "similarity", [](const Array& ref, const Array& test) { return similarity(to_matrix(ref), to_matrix(test)); },
      py::arg("ref"), py::arg("test"));

  m.def("bit_high_fraction",
        py::overload_cast<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, bool>(
            &bit_high_fraction),
        py::arg("len_q"), py::arg("len_k"), py::arg("tile_m"), py::arg("tile_n"), py::arg("diag"),
        py::arg("sink"), py::arg("causal") = true);

  m.def(
      "generate_tensors",
      [](std::size_t len_q, std::size_t len_k, std::size_t head_dim, std::uint64_t seed, double stddev) {
        const auto heads = generate_tensors(len_q, len_k, head_dim, 1, seed, stddev);
        return py::make_tuple(to_array(heads[0].q), to_array(heads[0].k), to_array(heads[0].v));
      },
      py::arg("len_q"), py::arg("len_k"), py::arg("head_dim"), py::arg("seed") = 0, py::arg("stddev") = 1.0);
}
