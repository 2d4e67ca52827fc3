#define N 512
#define STEPS 20

int main() {
  float grid[N], next[N];
  float residual = 1.0f;
  int iter = 0;
  for (int i = 0; i < N; i++) {
    grid[i] = i % 7;
    next[i] = 0.0f;
  }
  #pragma omp target data map(to:grid) map(from:next)
  {
    for (int t = 0; t < STEPS; t++) {
      #pragma omp target teams distribute parallel for
      for (int i = 1; i < N - 1; i++)
        next[i] = 0.5f * (grid[i - 1] + grid[i + 1]);
      #pragma omp target teams distribute parallel for
      for (int i = 1; i < N - 1; i++)
        grid[i] = next[i];
      #pragma omp target update from(grid)
      residual = grid[N / 2] - grid[N / 2 - 1];
      iter++;
    }
    grid[0] = residual;
    #pragma omp target update to(grid)
    #pragma omp target teams distribute parallel for
    for (int i = 1; i < N - 1; i++)
      next[i] = grid[i] + grid[0];
  }
  return next[3] > 0 ? iter : 0;
}
