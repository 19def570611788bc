#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mvsum/kernels.hpp"

namespace mvsum::kernels {

namespace {

template <typename T>
struct Table {
  T (*dot)(const T*, const T*, std::size_t);
  void (*axpy)(T, const T*, T*, std::size_t);
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
};

template <typename T>
constexpr Table<T> scalar_table() {
  return {&scalar::dot, &scalar::axpy, &scalar::gemm_nn, &scalar::gemm_nt, &scalar::gemm_tn};
}

#if defined(MVSUM_HAVE_AVX2)
template <typename T>
constexpr Table<T> avx2_table() {
  return {&avx2::dot, &avx2::axpy, &avx2::gemm_nn, &avx2::gemm_nt, &avx2::gemm_tn};
}
#endif

bool detect_avx2() {
#if defined(MVSUM_HAVE_AVX2)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("MVSUM_KERNELS"); env && std::string(env) == "scalar")
    return Backend::scalar;
  return detect_avx2() ? Backend::avx2 : Backend::scalar;
}

struct State {
  Backend backend;
  Table<float> f;
  Table<double> d;

  void select(Backend b) {
    backend = b;
#if defined(MVSUM_HAVE_AVX2)
    if (b == Backend::avx2) {
      f = avx2_table<float>();
      d = avx2_table<double>();
      return;
    }
#endif
    f = scalar_table<float>();
    d = scalar_table<double>();
  }
};

State& state() {
  static State s = [] {
    State st{};
    st.select(initial_backend());
    return st;
  }();
  return s;
}

template <typename T>
const Table<T>& table();
template <>
const Table<float>& table<float>() { return state().f; }
template <>
const Table<double>& table<double>() { return state().d; }

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool avx2_available() {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() { return state().backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available())
    throw std::runtime_error("avx2 kernels are not available on this machine");
  state().select(b);
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  return table<T>().dot(a, b, n);
}
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  table<T>().axpy(alpha, x, y, n);
}
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_nn(m, n, k, a, b, c);
}
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_nt(m, n, k, a, b, c);
}
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_tn(m, n, k, a, b, c);
}

template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);
template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);

}  // namespace mvsum::kernels
