#define N 1024

void saxpy(float *y, const float *x, float a, int n)
{
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < n; i++)
        y[i] = a * x[i] + y[i];
}

int main()
{
    float x[N], y[N];
    for (int i = 0; i < N; i++) {
        x[i] = i;
        y[i] = 2 * i;
    }
    saxpy(y, x, 3.0f, N);
    float s = 0;
    for (int i = 0; i < N; i++)
        s += y[i];
    return s > 0;
}
