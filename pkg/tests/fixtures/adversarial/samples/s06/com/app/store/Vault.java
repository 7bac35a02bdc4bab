package com.app.store;

import java.security.KeyStore;
import javax.crypto.Cipher;
import javax.crypto.SecretKeyFactory;

public class Vault {
    public void open(String transformation) throws Exception {
        KeyStore ks = KeyStore.getInstance("AndroidKeyStore");
        SecretKeyFactory f = SecretKeyFactory.getInstance("PBKDF2WithHmacSHA1");
        Cipher c = Cipher.getInstance(transformation);
    }
}
