/* Build: cargo build -p streamkv-ffi
   cc -I crates/ffi/include crates/ffi/examples/smoke.c target/debug/libstreamkv_ffi.a -lpthread -ldl -lm */
#include <stdio.h>
#include "streamkv.h"
int main(void) {
  SkvConfig *cfg = NULL;
  if (skv_config_from_toml("num_layers = 2\ntokens_per_frame = 16\nbudget_total = 64\nmodel_dim = 8\nkey_dim = 8\nffn_dim = 16\n", &cfg) != SKV_STATUS_OK) return 1;
  SkvSimulator *sim = NULL;
  skv_simulator_new(cfg, SKV_REGIME_STRUCTURED, &sim);
  skv_config_free(cfg);
  if (skv_simulator_step(sim, 4) != SKV_STATUS_OK) { printf("%s\n", skv_last_error()); return 2; }
  size_t n = 0; skv_simulator_cache_len(sim, 1, &n);
  printf("frames=%zu cache=%zu\n", skv_simulator_frames(sim), n);
  skv_simulator_free(sim);
  return 0;
}
